"""Direction rules u^k for the generalized extragradient schemes.

A rule mixes Fx^k with stored values Fy^{k-1} and Fx^{k-1}:

    u^k = a1·Fx^k + a2·Fy^{k-1} + (1 − a1 − a2)·Fx^{k-1},

and certifies constants (κ1, κ2) with

    ‖Fx^k − u^k‖² ≤ κ1‖Fx^k − Fy^{k-1}‖² + κ2‖Fx^k − Fx^{k-1}‖².
"""

import numpy as np

ALPHA_ROUNDING = 1e-12


class DirectionRule:
    """Affine direction rule with its own history slots.

    One instance belongs to one solver run. Call ``reset(Fx0)`` before use;
    this seeds both history slots with Fx^0 (the x^{-1} = y^{-1} = x^0 start).
    """

    def __init__(self, alpha1, alpha2, c=None, kind="Affine"):
        self.alpha1 = float(alpha1)
        self.alpha2 = float(alpha2)
        alpha3 = 1.0 - self.alpha1 - self.alpha2
        # 1 - 0.7 - 0.3 is not 0 in floating point; a rounding-level α3 means "no Fx^{k-1} term"
        if abs(alpha3) <= ALPHA_ROUNDING * (1.0 + abs(self.alpha1) + abs(self.alpha2)):
            alpha3 = 0.0
        self.alpha3 = alpha3
        if c is None:
            c = default_young_parameter(self.alpha2, self.alpha3)
        if c <= 0:
            raise ValueError("Young parameter c must be positive")
        self.c = float(c)
        self.kind = kind
        self.Fx_prev = None
        self.Fy_prev = None

    @property
    def uses_current(self):
        """Whether u^k needs a fresh evaluation of Fx^k."""
        return self.alpha1 != 0.0

    @property
    def kappas(self):
        if self.kind == "EG":
            return 0.0, 0.0
        if self.kind == "PastEG":
            return 1.0, 0.0
        k1 = (1.0 + self.c) * self.alpha2**2
        k2 = (1.0 + 1.0 / self.c) * self.alpha3**2
        return k1, k2

    def reset(self, Fx0):
        self.Fx_prev = Fx0
        self.Fy_prev = Fx0

    def direction(self, Fx):
        if self.Fx_prev is None:
            raise RuntimeError("direction rule used before reset()")
        if self.kind == "EG":
            return Fx
        if self.kind == "PastEG":
            return self.Fy_prev
        return self.alpha1 * Fx + self.alpha2 * self.Fy_prev + self.alpha3 * self.Fx_prev

    def advance(self, Fx, Fy):
        self.Fx_prev = Fx
        self.Fy_prev = Fy

    def clone(self):
        """Same coefficients, empty history."""
        return DirectionRule(self.alpha1, self.alpha2, self.c, self.kind)

    def __repr__(self):
        if self.kind in ("EG", "PastEG"):
            return f"{self.kind}()"
        return f"Affine({self.alpha1}, {self.alpha2}, c={self.c})"


def default_young_parameter(alpha2, alpha3):
    """|α3| / |α2|, which balances the two Young terms; 1 when either vanishes."""
    if alpha2 == 0.0 or alpha3 == 0.0:
        return 1.0
    return abs(alpha3) / abs(alpha2)


def eg():
    return DirectionRule(1.0, 0.0, kind="EG")


def past_eg():
    return DirectionRule(0.0, 1.0, kind="PastEG")


def affine(alpha1, alpha2, c=None):
    return DirectionRule(alpha1, alpha2, c)


def make_rule(name, alpha1=None, alpha2=None, c=None):
    """Rule from a config name: ``EG``, ``PastEG`` or ``Affine``."""
    if name == "EG":
        return eg()
    if name == "PastEG":
        return past_eg()
    if name == "Affine":
        if alpha1 is None or alpha2 is None:
            raise ValueError("Affine direction needs alpha1 and alpha2")
        return affine(alpha1, alpha2, c)
    raise ValueError(f"unknown direction rule {name!r}")


def certify_kappas(rule):
    return rule.kappas


def direction_gap(rule, Fx, Fy_prev, Fx_prev):
    """Return (‖Fx − u‖², κ-weighted bound) for one history triple."""
    probe = rule.clone()
    probe.Fx_prev, probe.Fy_prev = Fx_prev, Fy_prev
    u = probe.direction(Fx)
    k1, k2 = rule.kappas
    lhs = float(np.sum((Fx - u) ** 2))
    rhs = k1 * float(np.sum((Fx - Fy_prev) ** 2)) + k2 * float(np.sum((Fx - Fx_prev) ** 2))
    return lhs, rhs
