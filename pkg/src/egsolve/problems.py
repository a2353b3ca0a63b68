"""Benchmark problem generators: quadratic minimax, matrix games, ambiguous logistic regression.

Randomness comes from numpy's PCG64 generator with one named stream per
matrix or vector, so adding a new draw never shifts existing ones.
"""

import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .linops import AffineMap, ForwardMap
from .prox import resolvent_l1, resolvent_simplex, stack


def stream(seed, name):
    """Independent generator for the named stream of ``seed``."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(name.encode())])
    return np.random.Generator(np.random.PCG64(ss))


def orthogonal(n, rng):
    """Q from the QR factorization of a standard-normal matrix, with diag(R) >= 0."""
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    return q * signs


@dataclass
class Problem:
    F: ForwardMap
    J: object = None
    x_star: np.ndarray = None
    x0: np.ndarray = None
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class QuadMinimaxSpec:
    p1: int
    p2: int
    d_lower: float = 0.1
    eigen_mode: str = "clip"
    seed: int = 0
    constrained: bool = False

    def __post_init__(self):
        if self.p1 < 1 or self.p2 < 1:
            raise ValueError("dimensions must be >= 1")
        if self.eigen_mode not in ("clip", "uniform"):
            raise ValueError("eigen_mode must be 'clip' or 'uniform'")


def assemble_minimax(A, B, Lmat, b, c):
    """F = [[A, L], [−Lᵀ, B]], f = [b; c]."""
    M = np.block([[A, Lmat], [-Lmat.T, B]])
    return AffineMap(M, np.concatenate([b, c]))


def _sym_block(n, spec, tag):
    Q = orthogonal(n, stream(spec.seed, f"{tag}.Q"))
    rng = stream(spec.seed, f"{tag}.D")
    if spec.eigen_mode == "clip":
        d = np.maximum(rng.standard_normal(n), spec.d_lower)
    else:
        d = rng.uniform(-10.0, 10.0, n)
    S = (Q * d) @ Q.T
    return (S + S.T) / 2.0


def quad_blocks(spec):
    A = _sym_block(spec.p1, spec, "A")
    B = _sym_block(spec.p2, spec, "B")
    Lmat = stream(spec.seed, "L").standard_normal((spec.p1, spec.p2))
    b = stream(spec.seed, "b").standard_normal(spec.p1)
    c = stream(spec.seed, "c").standard_normal(spec.p2)
    return A, B, Lmat, b, c


def two_simplices(p1, p2):
    return stack((p1, resolvent_simplex()), (p2, resolvent_simplex()))


def gen_quad_minimax(spec):
    """Quadratic minimax operator; x* by dense solve in the unconstrained case."""
    F = assemble_minimax(*quad_blocks(spec))
    p = spec.p1 + spec.p2
    if spec.constrained:
        return Problem(F, two_simplices(spec.p1, spec.p2), None, np.full(p, 0.01),
                       {"kind": "quad", "split": (spec.p1, spec.p2)})
    try:
        x_star = np.linalg.solve(F.matrix, -F.offset)
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular operator matrix; choose another seed") from exc
    return Problem(F, None, x_star, np.full(p, 0.01), {"kind": "quad", "split": (spec.p1, spec.p2)})


def make_known_solution_inclusion(p1, p2, seed=0, d_lower=0.1):
    """Monotone affine F with a prescribed solution x* inside Δ_{p1} × Δ_{p2}.

    x* has strictly positive weights on both simplices and f := −Mx*, so
    Fx* = 0 and 0 ∈ Fx* + Tx*. The default start is a feasible point away
    from x*.
    """
    if p1 < 2 or p2 < 2:
        raise ValueError("dimensions must be >= 2")
    spec = QuadMinimaxSpec(p1, p2, d_lower, "clip", seed)
    A, B, Lmat, _, _ = quad_blocks(spec)
    F = assemble_minimax(A, B, Lmat, np.zeros(p1), np.zeros(p2))
    rng = stream(seed, "x_star")
    u = rng.uniform(0.5, 1.5, p1)
    v = rng.uniform(0.5, 1.5, p2)
    x_star = np.concatenate([u / u.sum(), v / v.sum()])
    F = AffineMap(F.matrix, -(F.matrix @ x_star))
    x0 = np.zeros(p1 + p2)
    x0[0] = 1.0
    x0[p1] = 1.0
    return Problem(F, two_simplices(p1, p2), x_star, x0, {"kind": "known", "split": (p1, p2)})


@dataclass(frozen=True)
class MatrixGameSpec:
    family: str = "family1"
    q: int = 50
    alpha: float = 1.0
    theta: float = 0.005
    seed: int = 0

    def __post_init__(self):
        if self.family not in ("family1", "family2", "burglar"):
            raise ValueError(f"unknown game family {self.family!r}")
        if self.q < 1:
            raise ValueError("q must be >= 1")


def game_matrix(spec, wealth=None):
    q = spec.q
    i = np.arange(1, q + 1)[:, None]
    j = np.arange(1, q + 1)[None, :]
    if spec.family == "family1":
        return ((i + j - 1) / (2 * q - 1)) ** spec.alpha
    if spec.family == "family2":
        return ((np.abs(i - j) + 1) / (2 * q - 1)) ** spec.alpha
    if wealth is None:
        wealth = np.abs(stream(spec.seed, "wealth").standard_normal(q))
    return np.asarray(wealth, dtype=float)[:, None] * (1.0 - np.exp(-spec.theta * np.abs(i - j)))


def gen_matrix_game(spec, wealth=None):
    """Fx = [Lᵀv; −Lu] over the product of two simplices."""
    Lm = game_matrix(spec, wealth)
    q = spec.q
    Z = np.zeros((q, q))
    F = AffineMap(np.block([[Z, Lm.T], [-Lm, Z]]))
    return Problem(F, two_simplices(q, q), None, np.full(2 * q, 0.5),
                   {"kind": "game", "family": spec.family, "split": (q, q)})


class LibSVMError(ValueError):
    pass


def parse_libsvm(path, expected_dim=None):
    """Read ``label idx:val ...`` lines (1-based indices) into dense rows.

    Labels greater than zero map to 1, all others to 0.
    """
    rows, labels, width = [], [], 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            label, *tokens = line.split()
            try:
                labels.append(1 if float(label) > 0 else 0)
            except ValueError:
                raise LibSVMError(f"line {lineno}: bad label {label!r}") from None
            entries = {}
            for tok in tokens:
                idx, sep, val = tok.partition(":")
                try:
                    idx, val = int(idx), float(val)
                except ValueError:
                    raise LibSVMError(f"line {lineno}: malformed token {tok!r}") from None
                if not sep or idx <= 0:
                    raise LibSVMError(f"line {lineno}: malformed token {tok!r}")
                entries[idx - 1] = val
                width = max(width, idx)
            rows.append(entries)
    if expected_dim is not None:
        if width > expected_dim:
            raise LibSVMError(f"feature index {width} exceeds expected dimension {expected_dim}")
        width = expected_dim
    X = np.zeros((len(rows), width))
    for r, entries in enumerate(rows):
        for idx, val in entries.items():
            X[r, idx] = val
    return X, np.array(labels, dtype=int)


def synthetic_logit_data(N=100, d=20, seed=0):
    """Features ~ N(0, 1) and labels drawn from a sparse logistic model."""
    X = stream(seed, "logit.X").standard_normal((N, d))
    w = stream(seed, "logit.w").standard_normal(d) * (np.arange(d) < max(1, d // 4))
    prob = expit(X @ w)
    y = (stream(seed, "logit.y").uniform(size=N) < prob).astype(int)
    return X, y


@dataclass(frozen=True)
class LogitAmbiguousSpec:
    path: str = None
    m: int = 3
    noise: float = 1.0
    gamma: float = 5e-4
    seed: int = 0
    N: int = 100
    d: int = 20


def ambiguous_copies(X, m, noise, seed):
    """Unit-norm rows plus m independent noise draws, then a bias column of ones."""
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    Xn = X / np.where(norms > 0, norms, 1.0)
    rng = stream(seed, "logit.noise")
    copies = Xn[None, :, :] + noise * rng.standard_normal((m,) + X.shape)
    ones = np.ones((m, X.shape[0], 1))
    return np.concatenate([copies, ones], axis=2)


class LogitMinimaxMap(ForwardMap):
    """F(w, v) = [∇_w ℋ; −∇_v ℋ] for ℋ(w, v) = (1/N) Σ_i Σ_j v_j ℓ(⟨X_ij, w⟩, y_i)."""

    def __init__(self, copies, labels):
        self.copies = copies  # shape (m, N, d + 1)
        self.labels = np.asarray(labels, dtype=float)
        m, _, dw = copies.shape
        self.dw, self.m = dw, m
        super().__init__(self._apply, dw + m)

    def split(self, x):
        return x[: self.dw], x[self.dw:]

    def _apply(self, x):
        w, v = self.split(x)
        t = self.copies @ w
        n = t.shape[1]
        lprime = expit(t) - self.labels
        Fw = np.einsum("j,ji,jik->k", v, lprime, self.copies) / n
        losses = np.logaddexp(0.0, t) - self.labels * t
        return np.concatenate([Fw, -losses.mean(axis=1)])

    def bifunction(self, x):
        w, v = self.split(x)
        t = self.copies @ w
        losses = np.logaddexp(0.0, t) - self.labels * t
        return float(v @ losses.mean(axis=1))


def gen_logit_ambiguous(spec, data=None):
    """Ambiguous-feature logistic minimax over [w; v] with T = [γ∂‖·‖₁; N_Δm]."""
    if data is not None:
        X, y = data
    elif spec.path is not None:
        X, y = parse_libsvm(spec.path)
    else:
        X, y = synthetic_logit_data(spec.N, spec.d, spec.seed)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0 or len(y) != X.shape[0]:
        raise ValueError("dataset must be a nonempty matrix with one label per row")
    copies = ambiguous_copies(X, spec.m, spec.noise, spec.seed)
    F = LogitMinimaxMap(copies, y)
    J = stack((F.dw, resolvent_l1(spec.gamma)), (spec.m, resolvent_simplex()))
    return Problem(F, J, None, np.full(F.dim, 0.5), {"kind": "logit", "split": (F.dw, spec.m)})


def write_matrix_csv(path, matrix):
    np.savetxt(path, np.atleast_2d(matrix), delimiter=",", fmt="%.17g")
