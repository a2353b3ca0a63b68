"""Stepsize intervals and certificate constants for the extragradient family.

Every function here is a pure calculator. The symbols follow the usual
analysis of the generalized extragradient scheme:

* ``L``: Lipschitz constant of F;
* ``rho``: weak-Minty / co-hypomonotonicity modulus (0 for monotone F);
* ``beta``: scaling of the extrapolation step, in (0, 1];
* ``kappa1``, ``kappa2``: constants certified by the direction rule.
"""

import math
from dataclasses import dataclass, field

import numpy as np

SQRT2 = math.sqrt(2.0)
GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0
GR_TAU_MAX = 1.0 + math.sqrt(3.0)
# relative slack when comparing Lρ with a threshold, absorbs rounding in Lρ
ROUNDING = 1e-14


class NoAdmissibleStep(ValueError):
    """Raised when Lρ exceeds the threshold that makes the interval nonempty."""

    def __init__(self, message, threshold):
        super().__init__(message)
        self.threshold = threshold


class StepOutOfRange(ValueError):
    pass


@dataclass(frozen=True)
class ProblemConstants:
    L: float
    rho: float = 0.0
    beta: float = 1.0
    kappa1: float = 0.0
    kappa2: float = 0.0

    def __post_init__(self):
        if not self.L >= 0:
            raise ValueError("L must be nonnegative")
        if not self.rho >= 0:
            raise ValueError("rho must be nonnegative")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError("beta must lie in (0, 1]")
        if self.kappa1 < 0 or self.kappa2 < 0:
            raise ValueError("kappas must be nonnegative")
        if self.beta == 1.0 and self.kappa2 > 0:
            raise ValueError("beta = 1 is only allowed when kappa2 = 0")

    @property
    def r(self):
        return r_of(self.kappa1)

    @property
    def mu(self):
        if self.kappa2 == 0:
            return 1.0
        r = self.r
        return r / (r + 2.0 * self.kappa2)

    @property
    def alpha(self):
        r = self.r
        return math.inf if r == 0 else (1.0 + r) / r


def r_of(kappa1):
    return (kappa1 + math.sqrt(kappa1 * kappa1 + 4.0 * kappa1)) / 2.0


@dataclass(frozen=True)
class StepRange:
    r: float
    alpha: float
    mu: float
    delta: float
    lo: float
    hi: float
    closed: bool = False
    m: float = None
    delta_hat: float = None
    lo_hat: float = None
    hi_hat: float = None

    @property
    def certified(self):
        """Intersection of the best- and last-iterate intervals when both exist."""
        if self.lo_hat is None:
            return self.lo, self.hi
        return max(self.lo, self.lo_hat), min(self.hi, self.hi_hat)

    def contains(self, eta):
        lo, hi = self.certified
        return lo <= eta <= hi and eta > 0


def delta_threshold(pc):
    """Largest Lρ for which the best-iterate interval is nonempty."""
    r, k2, beta = pc.r, pc.kappa2, pc.beta
    if k2 == 0:
        return beta * beta / (16.0 * (1.0 + r))
    if r == 0:
        return 0.0
    first = (1.0 + 2.0 * k2 / r) * beta * beta
    # ((1 − β)/κ2)² rather than (1 − β)²/κ2², which underflows for tiny κ2
    t = (1.0 - beta) / k2
    second = t * t * r * (r + 2.0 * k2)
    return min(first, second) / (16.0 * (1.0 + r))


def _quadratic_roots(b, q, denom):
    """Roots (b ± √(b² − q)) / denom, the smaller one in the cancellation-free form q / (denom·(b + √·))."""
    disc = b * b - q
    if disc <= 0.0:
        # double root (up to rounding in q)
        return b / denom, b / denom
    root = math.sqrt(disc)
    return q / (denom * (b + root)), (b + root) / denom


def eta_intervals(pc):
    """Raw (η1_lo, η1_hi, η2_lo, η2_hi); the η2 pair is None when κ2 = 0."""
    if pc.L <= 0:
        raise ValueError("L must be positive")
    L, rho, beta, r, mu = pc.L, pc.rho, pc.beta, pc.r, pc.mu
    lo1, hi1 = _quadratic_roots(beta, 16.0 * (1.0 + r) * mu * L * rho, 2.0 * (1.0 + r) * L)
    if pc.kappa2 == 0:
        return lo1, hi1, None, None
    k2, a = pc.kappa2, pc.alpha
    if math.isinf(a):
        return lo1, hi1, 0.0, 0.0
    lo2, hi2 = _quadratic_roots(1.0 - beta, 8.0 * a * (1.0 - mu) * k2 * L * rho, 2.0 * a * k2 * L)
    return lo1, hi1, lo2, hi2


def best_iterate_range(pc):
    """Admissible η for the best-iterate rates (open at the endpoints)."""
    delta = delta_threshold(pc)
    if pc.L * pc.rho > delta * (1.0 + ROUNDING):
        raise NoAdmissibleStep(
            f"L*rho = {pc.L * pc.rho:.6g} exceeds Delta = {delta:.6g}: no admissible stepsize",
            delta,
        )
    lo1, hi1, lo2, hi2 = eta_intervals(pc)
    lo, hi = lo1, hi1
    if lo2 is not None:
        lo, hi = max(lo1, lo2), min(hi1, hi2)
    if hi <= 0 or lo > hi:
        raise NoAdmissibleStep("stepsize interval is empty", delta)
    return StepRange(pc.r, pc.alpha, pc.mu, delta, lo, hi)


def last_iterate_m(kappa1):
    return math.sqrt((1.0 + SQRT2) * (kappa1 + SQRT2))


def last_iterate_range(pc):
    """Best-iterate interval together with the closed last-iterate interval.

    Needs β = 1 and κ2 = 0. ``lo_hat``/``hi_hat`` hold the last-iterate
    interval itself; ``certified`` gives its intersection with the
    best-iterate interval, which is where the monotonicity result applies.
    """
    if pc.beta != 1.0 or pc.kappa2 != 0:
        raise ValueError("last-iterate range needs beta = 1 and kappa2 = 0")
    m = last_iterate_m(pc.kappa1)
    delta_hat = 1.0 / (16.0 * m)
    if pc.L * pc.rho > delta_hat * (1.0 + ROUNDING):
        raise NoAdmissibleStep(
            f"L*rho = {pc.L * pc.rho:.6g} exceeds Delta_hat = {delta_hat:.6g}", delta_hat
        )
    best = best_iterate_range(pc)
    lo_hat, hi_hat = _quadratic_roots(1.0, 16.0 * m * pc.L * pc.rho, 2.0 * m * pc.L)
    return StepRange(
        best.r, best.alpha, best.mu, best.delta, best.lo, best.hi,
        closed=True, m=m, delta_hat=delta_hat, lo_hat=lo_hat, hi_hat=hi_hat,
    )


def inclusion_upper(pc):
    """Upper stepsize for the monotone inclusion scheme: min{β/((1+r)L), (1−β)r/(κ2(1+r)L)}."""
    r = pc.r
    hi = pc.beta / ((1.0 + r) * pc.L)
    if pc.kappa2 > 0:
        hi = min(hi, (1.0 - pc.beta) * r / (pc.kappa2 * (1.0 + r) * pc.L))
    return hi


def gr_psi(tau):
    return (2.0 * tau + 2.0 - tau * tau) / tau


def gr_regime(tau):
    if 1.0 < tau <= GOLDEN:
        return "GR2_low"
    if GOLDEN < tau < GR_TAU_MAX:
        return "GR2_high"
    raise ValueError(f"tau = {tau} outside (1, 1 + sqrt(3))")


def upper_step(family, pc, tau=None):
    """Theoretical upper stepsize used by the "auto" rule."""
    if family in ("GEG", "GFBFS2"):
        return best_iterate_range(pc).hi
    if family == "GEG2":
        if pc.rho > 0:
            raise ValueError("the inclusion scheme is certified for monotone F only")
        return inclusion_upper(pc)
    if family == "RFBS2":
        return (SQRT2 - 1.0) / pc.L
    if family == "GR2":
        if gr_regime(tau) == "GR2_low":
            return tau / (2.0 * pc.L)
        return gr_psi(tau) / (2.0 * pc.L)
    raise ValueError(f"no certified stepsize for family {family!r}")


@dataclass
class CertifiedConstants:
    family: str
    eta: float
    C1: float = None
    C2: float = None
    Lambda: float = None
    Gamma: float = None
    omega: float = None
    psi_eg: float = None
    s: float = None
    coef_y: float = 0.0
    coef_x: float = 0.0
    omega_rfbs: float = None
    C0_rfbs: float = None
    decrease_rfbs: float = None
    w_decrease_rfbs: float = None
    tau: float = None
    phi_gr: float = None
    psi_gr: float = None
    kappa_gr: float = None
    C0_gr: float = None
    C0_hat_gr: float = None
    v_coef_gr: float = None
    decrease_y_gr: float = None
    decrease_x_gr: float = None
    extra: dict = field(default_factory=dict)


def _lyapunov_coefs(pc, eta):
    r = pc.r
    if r == 0:
        return 0.0, 0.0
    scale = (1.0 + r) * pc.L * eta / r
    return pc.kappa1 * scale, pc.kappa2 * scale


def _check_eta(eta, lo, hi, name, strict_hi=False):
    if not eta > 0:
        raise StepOutOfRange(f"{name}: eta must be positive")
    if eta < lo:
        raise StepOutOfRange(f"{name}: eta = {eta:.6g} below lower bound {lo:.6g}")
    if eta > hi or (strict_hi and eta == hi):
        raise StepOutOfRange(f"{name}: eta = {eta:.6g} above upper bound {hi:.6g}")


def constants_at(pc, eta, family, tau=None, check=True):
    """All certificate constants of ``family`` at stepsize ``eta``."""
    L = pc.L
    out = CertifiedConstants(family, eta)
    if family in ("GEG_NE", "GFBFS2"):
        if check:
            rng = best_iterate_range(pc)
            _check_eta(eta, rng.lo, rng.hi, family)
        r, mu, a = pc.r, pc.mu, pc.alpha
        out.C1 = pc.beta - (1.0 + r) * L * eta - 4.0 * mu * pc.rho / eta
        k2_term = 0.0 if pc.kappa2 == 0 else a * pc.kappa2 * L * eta
        out.C2 = 1.0 - pc.beta - k2_term - 2.0 * (1.0 - mu) * pc.rho / eta
        out.Lambda = (out.C1 + 2.0 * out.C2) / 2.0
        if out.C1 > 0:
            out.Gamma = 2.0 * L * L / out.C1 + 2.0 / out.Lambda / eta / eta
        out.coef_y, out.coef_x = _lyapunov_coefs(pc, eta)
        if pc.beta == 1.0 and pc.kappa2 == 0:
            q = (1.0 + SQRT2) * pc.kappa1 * L * L * eta * eta
            if q < 1.0:
                out.omega = 2.0 * q / (1.0 - q)
            t = 4.0 * pc.rho / eta
            out.psi_eg = 1.0 - t - (1.0 + t) * L * L * eta * eta
    elif family in ("GEG2_NI_best", "GEG2_NI_last"):
        if pc.rho > 0:
            raise ValueError(f"{family} is certified for monotone F only")
        r = pc.r
        if family == "GEG2_NI_best":
            if check:
                _check_eta(eta, 0.0, inclusion_upper(pc), family)
        else:
            if pc.beta != 1.0:
                raise ValueError("GEG2_NI_last needs beta = 1")
            if check:
                _check_eta(eta, 0.0, pc.beta / ((1.0 + r) * L), family, strict_hi=True)
        out.C1 = pc.beta - (1.0 + r) * L * eta
        out.C2 = 1.0 - pc.beta - (0.0 if r == 0 else pc.kappa2 * (1.0 + r) * L * eta / r)
        c1, c2, g = out.C1, out.C2, L * L * eta * eta
        if c1 > 0 and c1 + 3.0 * c2 > 0:
            out.Lambda = 3.0 * (3.0 * c1 + 2.0 * (c1 + 3.0 * c2) * g) / (3.0 * c1 * (c1 + 3.0 * c2))
        out.coef_y, out.coef_x = _lyapunov_coefs(pc, eta)
        if family == "GEG2_NI_last":
            k1 = pc.kappa1
            b = (1.0 + r) ** 2 - 2.0 * k1 - 1.0
            out.s = (b + math.sqrt(max(b * b - 4.0 * k1 * (1.0 + k1), 0.0))) / (2.0 * (1.0 + k1))
            den = out.s - (1.0 + out.s) * k1 * g
            if k1 == 0:
                out.omega = 0.0
            elif den > 0:
                out.omega = k1 * (out.s + (1.0 + out.s) * g) / den
            elif check:
                raise StepOutOfRange(f"{family}: omega undefined at eta = {eta:.6g}")
            if out.Lambda is not None and out.omega is not None and c1 > 0:
                out.Gamma = out.Lambda / (eta * eta) + L * L * out.omega / c1
    elif family == "RFBS2":
        if check:
            _check_eta(eta, 0.0, (SQRT2 - 1.0) / L, family, strict_hi=True)
        g = L * L * eta * eta
        out.omega_rfbs = 2.0 * g / (1.0 - 2.0 * g)
        out.decrease_rfbs = 1.0 - (1.0 + SQRT2) * L * eta
        out.C0_rfbs = (5.0 * g + 3.0) / (3.0 * eta * eta * out.decrease_rfbs)
        out.w_decrease_rfbs = (1.0 - 4.0 * g) / (1.0 - 2.0 * g)
    elif family in ("GR2_low", "GR2_high"):
        if tau is None:
            raise ValueError("GR families need tau")
        regime = gr_regime(tau)
        if regime != family:
            raise ValueError(f"tau = {tau} belongs to {regime}, not {family}")
        g = L * L * eta * eta
        out.tau = tau
        if family == "GR2_low":
            if check:
                _check_eta(eta, 0.0, tau / (2.0 * L), family, strict_hi=True)
            out.phi_gr = (tau * tau - 4.0 * g) / (2.0 * tau)
            out.C0_gr = (tau * tau - 2.0 * g) * tau / ((tau * tau - 4.0 * g) * eta * eta * (tau - 1.0))
            out.v_coef_gr = tau * (tau - 1.0) / 2.0
            out.decrease_y_gr = tau * (tau - 1.0)
            out.decrease_x_gr = (tau - 1.0) * out.phi_gr
        else:
            psi = gr_psi(tau)
            if check:
                _check_eta(eta, 0.0, psi / (2.0 * L), family, strict_hi=True)
            out.psi_gr = psi
            out.kappa_gr = (psi * psi - 4.0 * g) / (2.0 * psi)
            out.C0_hat_gr = (
                (psi * psi - 2.0 * g * (2.0 * tau * tau - psi * psi)) * tau
                / ((tau - 1.0) * (psi * psi - 4.0 * g) * eta * eta * psi)
            )
            out.v_coef_gr = psi * (tau - 1.0) / 2.0
            out.decrease_y_gr = psi * (tau - 1.0)
            out.decrease_x_gr = (tau - 1.0) * out.kappa_gr
    else:
        raise ValueError(f"unknown family {family!r}")
    if check and out.C1 is not None and (out.C1 < -1e-12 or out.C2 < -1e-12):
        raise StepOutOfRange(f"{family}: negative constants C1={out.C1:.3g}, C2={out.C2:.3g}")
    return out


class LemmaViolation(AssertionError):
    pass


@dataclass
class LemmaReport:
    trials: int = 0
    passed: int = 0
    rejected: int = 0
    intersection_trials: int = 0
    intersection_passed: int = 0
    ordering_checked: int = 0


def check_interval_lemmas(trials=1000, seed=0, samples_per_trial=10):
    """Randomized check of interval nonemptiness, sign of C1/C2 and the last-iterate overlap.

    Each trial draws (κ1, κ2, β, L, ρ) with Lρ ≤ Δ, checks η_lo ≤ η_hi, the
    ordering of the two quadratic intervals and C1, C2 ≥ 0 on sampled η.
    It also draws a β = 1, κ2 = 0 tuple with Lρ ≤ min(Δ, Δ̂) and checks that
    the best- and last-iterate intervals overlap. A further tuple with Lρ just
    above Δ must be rejected. Any violation raises ``LemmaViolation``.
    """
    rng = np.random.default_rng(seed)
    rep = LemmaReport()
    for t in range(trials):
        k1 = float(rng.uniform(0.0, 4.0))
        if t % 4 == 0:
            k2 = 0.0
            beta = 1.0 if t % 8 == 0 else float(rng.uniform(0.05, 1.0))
        else:
            k2 = float(rng.uniform(0.0, 2.0))
            beta = float(rng.uniform(0.05, 0.999))
        L = float(10.0 ** rng.uniform(-1.0, 1.0))
        base = ProblemConstants(L, 0.0, beta, k1, k2)
        delta = delta_threshold(base)
        frac = 1.0 if t % 10 == 1 else float(rng.uniform(0.0, 1.0))
        pc = ProblemConstants(L, frac * delta / L, beta, k1, k2)
        tup = (k1, k2, beta, L, pc.rho)
        rep.trials += 1
        try:
            rng_ = best_iterate_range(pc)
        except NoAdmissibleStep as exc:
            if delta > 0:
                raise LemmaViolation(f"empty interval at {tup}") from exc
            rep.passed += 1
            continue
        tol = 1e-12 * max(1.0, abs(rng_.hi))
        if rng_.lo > rng_.hi + tol:
            raise LemmaViolation(f"lo > hi at {tup}")
        lo1, hi1, lo2, hi2 = eta_intervals(pc)
        if lo2 is not None and pc.r > 0:
            rep.ordering_checked += 1
            if beta <= pc.r / (pc.r + k2):
                ok = lo2 <= lo1 + tol and hi1 <= hi2 + tol
            else:
                ok = lo1 <= lo2 + tol and hi2 <= hi1 + tol
            if not ok:
                raise LemmaViolation(f"interval ordering fails at {tup}")
        for eta in rng.uniform(rng_.lo, rng_.hi, samples_per_trial):
            if eta <= 0:
                continue
            c = constants_at(pc, float(eta), "GEG_NE", check=False)
            if c.C1 < -1e-12 or c.C2 < -1e-12:
                raise LemmaViolation(f"negative constants at {tup}, eta={eta}: {c.C1}, {c.C2}")
        # just above the threshold must be rejected
        if delta > 0:
            above = ProblemConstants(L, delta * (1.0 + 1e-9) / L, beta, k1, k2)
            try:
                best_iterate_range(above)
            except NoAdmissibleStep:
                rep.rejected += 1
            else:
                raise LemmaViolation(f"threshold not enforced at {tup}")
        rep.passed += 1

        # overlap of best- and last-iterate intervals
        pc1 = ProblemConstants(L, 0.0, 1.0, k1, 0.0)
        cap = min(delta_threshold(pc1), 1.0 / (16.0 * last_iterate_m(k1)))
        pc1 = ProblemConstants(L, float(rng.uniform(0.0, 1.0)) * cap / L, 1.0, k1, 0.0)
        rep.intersection_trials += 1
        lr = last_iterate_range(pc1)
        lo, hi = lr.certified
        if lo > hi + 1e-12 * max(1.0, hi):
            raise LemmaViolation(f"empty last-iterate overlap at {(k1, L, pc1.rho)}")
        rep.intersection_passed += 1
    return rep
