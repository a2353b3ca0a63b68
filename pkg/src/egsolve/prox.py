"""Proximal operators and resolvents used by the benchmark problems."""

import numpy as np

from .linops import Resolvent


def project_simplex(x):
    """Euclidean projection onto the standard simplex {z >= 0, sum z = 1}.

    Sort-based thresholding. The pivot is the largest feasible index, and the
    largest coordinate absorbs the rounding so the output sums to one.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 1:
        raise ValueError("simplex projection needs a nonempty vector")
    u = np.sort(x)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, x.size + 1)
    feasible = np.nonzero(u - css / idx > 0)[0]
    rho = feasible[-1] + 1
    theta = css[rho - 1] / rho
    z = np.maximum(x - theta, 0.0)
    i = int(np.argmax(z))
    z[i] += 1.0 - z.sum()
    return z


def prox_l1(x, t):
    """Soft-thresholding, the prox of t·‖·‖₁."""
    if t < 0:
        raise ValueError("threshold must be nonnegative")
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def resolvent_zero(dim=None):
    return Resolvent(lambda x, eta: x, dim, identity=True)


def resolvent_simplex(dim=None):
    """Resolvent of the normal cone of the simplex (independent of eta)."""
    return Resolvent(lambda x, eta: project_simplex(x), dim)


def resolvent_l1(weight, dim=None):
    """Resolvent of weight·∂‖·‖₁, i.e. soft-thresholding at weight·eta."""
    if weight < 0:
        raise ValueError("weight must be nonnegative")
    return Resolvent(lambda x, eta: prox_l1(x, weight * eta), dim)


class BlockResolvent(Resolvent):
    """Resolvent of a block-diagonal operator T = [T_1, ..., T_n].

    Components are applied through their raw functions, so a block
    application counts once on the block and never on the components.
    """

    def __init__(self, blocks):
        blocks = sorted(((int(o), int(n), J) for o, n, J in blocks), key=lambda b: b[0])
        if not blocks:
            raise ValueError("need at least one block")
        end = 0
        for offset, length, _ in blocks:
            if length < 1:
                raise ValueError("block lengths must be positive")
            if offset != end:
                kind = "overlap" if offset < end else "gap"
                raise ValueError(f"blocks do not tile the dimension ({kind} at {offset})")
            end = offset + length
        self.blocks = blocks
        super().__init__(self._apply, end, identity=all(J.identity for *_, J in blocks))

    def _apply(self, x, eta):
        out = np.empty_like(x)
        for offset, length, J in self.blocks:
            sl = slice(offset, offset + length)
            out[sl] = J.fn(x[sl], eta)
        return out


def make_block(components):
    """Build a block resolvent from (offset, length, resolvent) triples."""
    return BlockResolvent(components)


def stack(*parts):
    """Block resolvent from consecutive (length, resolvent) pairs."""
    blocks, offset = [], 0
    for length, J in parts:
        blocks.append((offset, length, J))
        offset += length
    return BlockResolvent(blocks)
