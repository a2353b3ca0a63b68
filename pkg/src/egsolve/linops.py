"""Operators, residual metrics and spectral probes.

Points are plain 1-D float64 numpy arrays. Operators carry their own
evaluation counters; ``fresh()`` hands out a copy with a zeroed counter,
so concurrent runs over one problem never share counting state.
"""

import copy
from dataclasses import dataclass

import numpy as np

GUARD = 1e-12


def as_point(x, split=None):
    """Return ``x`` as a finite float64 vector, optionally checking a block split."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError(f"point must be a vector, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("point has non-finite entries")
    if split is not None:
        p1, p2 = split
        if not (0 < p1 < x.size and p1 + p2 == x.size):
            raise ValueError(f"invalid block split {split} for dimension {x.size}")
    return x


class ForwardMap:
    """Single-valued operator x -> F(x) with an evaluation counter.

    ``F(x)`` counts one evaluation. ``F.peek(x)`` evaluates without counting
    (used for monitoring), and ``F.charge()`` books an evaluation whose value
    was already obtained through ``peek``.
    """

    def __init__(self, fn, dim, lipschitz=None):
        self.fn = fn
        self.dim = int(dim)
        self._lipschitz = lipschitz
        self.evals = 0

    @property
    def lipschitz(self):
        return self._lipschitz

    def _eval(self, x, counted):
        return self.fn(x)

    def __call__(self, x):
        self.evals += 1
        return self._eval(x, True)

    def peek(self, x):
        return self._eval(x, False)

    def charge(self, n=1):
        self.evals += n

    def fresh(self):
        other = copy.copy(self)
        other.evals = 0
        return other


class AffineMap(ForwardMap):
    """F(x) = M x + f. The Lipschitz constant is the spectral norm of M."""

    def __init__(self, matrix, offset=None):
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError("affine map needs a square matrix")
        if not np.all(np.isfinite(matrix)):
            raise ValueError("matrix has non-finite entries")
        p = matrix.shape[0]
        offset = np.zeros(p) if offset is None else as_point(offset)
        if offset.size != p:
            raise ValueError("offset dimension does not match matrix")
        self.matrix = matrix
        self.offset = offset
        super().__init__(self._apply, p)

    def _apply(self, x):
        return self.matrix @ x + self.offset

    @property
    def lipschitz(self):
        if self._lipschitz is None:
            self._lipschitz = spectral_norm(self)
        return self._lipschitz


class Resolvent:
    """Resolvent x -> J_{eta T}(x) with an evaluation counter.

    ``fn(x, eta)`` must be pure. ``identity`` marks the resolvent of T = 0.
    """

    def __init__(self, fn, dim=None, identity=False):
        self.fn = fn
        self.dim = dim
        self.identity = identity
        self.evals = 0

    def apply(self, x, eta):
        self.evals += 1
        return self.fn(x, eta)

    __call__ = apply

    def peek(self, x, eta):
        return self.fn(x, eta)

    def fresh(self):
        other = copy.copy(self)
        other.evals = 0
        return other


class SpectralNormError(RuntimeError):
    def __init__(self, estimate, iterations):
        super().__init__(
            f"power iteration did not converge in {iterations} iterations "
            f"(last estimate {estimate!r})"
        )
        self.estimate = estimate


def spectral_norm(F, tol=1e-10, max_iter=10_000, seed=0, block=8):
    """Largest singular value of an affine map's matrix by block power iteration on MᵀM.

    A seeded block of ``block`` vectors is multiplied by MᵀM and
    re-orthonormalized each sweep; a Rayleigh-Ritz step extracts the top
    pair. The block keeps near-equal top singular values from stalling the
    iteration. Stops once the Ritz residual ‖MᵀMv − θv‖ is below ``tol·θ``.
    """
    M = F.matrix if isinstance(F, AffineMap) else np.asarray(F, dtype=float)
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    if not np.any(M):
        return 0.0
    n = M.shape[1]
    rng = np.random.default_rng(seed)
    V, _ = np.linalg.qr(rng.standard_normal((n, min(block, n))))
    theta = 0.0
    for _ in range(max_iter):
        W = M.T @ (M @ V)
        vals, vecs = np.linalg.eigh(V.T @ W)
        theta, y = float(vals[-1]), vecs[:, -1]
        r = W @ y - theta * (V @ y)
        if theta > 0 and np.linalg.norm(r) <= tol * theta:
            return float(np.sqrt(theta))
        V, _ = np.linalg.qr(W)
    raise SpectralNormError(float(np.sqrt(max(theta, 0.0))), max_iter)


def residual_ne(F, x):
    """‖Fx‖, evaluated without touching the counter."""
    return float(np.linalg.norm(F.peek(x)))


def fb_residual_vector(F, J, x, eta, Fx=None):
    """(x − J_{ηT}(x − ηFx)) / η."""
    if Fx is None:
        Fx = F.peek(x)
    if J is None or J.identity:
        return Fx
    return (x - J.peek(x - eta * Fx, eta)) / eta


def residual_fb(F, J, x, eta, Fx=None):
    """Norm of the forward-backward residual; equals ‖Fx‖ when T = 0."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    return float(np.linalg.norm(fb_residual_vector(F, J, x, eta, Fx)))


class TsengMap(ForwardMap):
    """x − J(x − λFx) − λ(Fx − F(J(x − λFx))), whose zeros solve 0 ∈ Fx + Tx."""

    def __init__(self, F, J, lam):
        if lam <= 0:
            raise ValueError("lambda must be positive")
        self.inner = F
        self.resolvent = J
        self.lam = float(lam)
        super().__init__(None, F.dim)

    def _eval(self, x, counted):
        F, J, lam = self.inner, self.resolvent, self.lam
        if counted:
            Fx = F(x)
            z = J.apply(x - lam * Fx, lam)
            Fz = F(z)
        else:
            Fx = F.peek(x)
            z = J.peek(x - lam * Fx, lam)
            Fz = F.peek(z)
        return x - z - lam * (Fx - Fz)

    def fresh(self):
        return TsengMap(self.inner.fresh(), self.resolvent.fresh(), self.lam)


def tseng_hat(F, J, lam):
    return TsengMap(F, J, lam)


@dataclass(frozen=True)
class MonotonicityProbe:
    min_inner_product: float
    min_comonotone_ratio: float
    skipped: int


def probe_star_monotone(F, x_star, samples=100, seed=0, scale=1.0):
    """Sample ⟨Fx, x − x*⟩ and its ratio to ‖Fx‖² around x*.

    This is a diagnostic only: a nonnegative minimum over samples does not
    prove the weak-Minty property.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    x_star = as_point(x_star)
    rng = np.random.default_rng(seed)
    min_ip = np.inf
    min_ratio = np.inf
    skipped = 0
    for _ in range(samples):
        x = x_star + scale * rng.standard_normal(x_star.size)
        Fx = F.peek(x)
        ip = float(Fx @ (x - x_star))
        min_ip = min(min_ip, ip)
        nrm2 = float(Fx @ Fx)
        if np.sqrt(nrm2) < GUARD:
            skipped += 1
            continue
        min_ratio = min(min_ratio, ip / nrm2)
    return MonotonicityProbe(min_ip, min_ratio, skipped)
