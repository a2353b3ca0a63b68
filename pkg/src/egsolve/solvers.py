"""Iteration engines: GEG, GEG2, GFBFS2, RFBS2, GR2 and the FW/FBS baselines.

Each ``step_*`` function maps a ``SolverState`` at iteration k to the state
at k + 1. Operator values used only for monitoring are obtained with
``peek`` and booked with ``charge`` when the algorithm actually consumes
them, so the counters reflect the algorithm's own cost: GEG/GEG2 with an
EG or affine rule spend 2 F-evaluations per step, the past-extragradient
rule spends 1, GEG2 spends 2 resolvent calls and GFBFS2/RFBS2/GR2/FBS one.
"""

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .directions import make_rule
from .linops import GUARD, as_point, fb_residual_vector
from .stepsizes import ProblemConstants, constants_at, gr_regime, upper_step

FAMILIES = ("FW", "FBS", "GEG", "GEG2", "GFBFS2", "RFBS2", "GR2")
NE_FAMILIES = ("FW", "GEG")
RULE_FAMILIES = ("GEG", "GEG2", "GFBFS2")
DIVERGENCE_RATIO = 1e12


@dataclass(frozen=True)
class SolverState:
    """Iterate k together with the history the schemes and certificates need.

    ``y_prev`` and ``Fy_prev`` hold y^{k-1} and Fy^{k-1}; ``xi`` is the
    multiplier ξ^k recovered from the last resolvent step (None when the
    scheme has none or k = 0); ``u_prev`` is u^{k-1}.
    """

    k: int
    x: np.ndarray
    x_prev: np.ndarray
    y_prev: np.ndarray
    Fx: np.ndarray
    Fx_prev: np.ndarray
    Fy_prev: np.ndarray
    xi: np.ndarray = None
    u_prev: np.ndarray = None


def init_state(F, x0, rule=None):
    """State at k = 0 with x^{-1} = y^{-1} = x^0."""
    x0 = as_point(x0)
    Fx0 = F.peek(x0)
    if rule is not None:
        rule.reset(Fx0)
        if not rule.uses_current:
            # the rule reads Fy^{-1} = Fx^0, so that evaluation is real
            F.charge()
    return SolverState(0, x0, x0, x0, Fx0, Fx0, Fx0)


def _advance(state, F, x_new, y, Fy, u=None, xi=None):
    return SolverState(
        state.k + 1, x_new, state.x, y, F.peek(x_new), state.Fx, Fy, xi, u
    )


def _consume_current(F, rule):
    if rule.uses_current:
        F.charge()


def step_geg(state, F, rule, eta, beta):
    """y = x − (η/β)u,  x⁺ = x − ηFy."""
    _consume_current(F, rule)
    u = rule.direction(state.Fx)
    y = state.x - (eta / beta) * u
    Fy = F(y)
    x_new = state.x - eta * Fy
    rule.advance(state.Fx, Fy)
    return _advance(state, F, x_new, y, Fy, u)


def step_geg2(state, F, J, rule, eta, beta):
    """y = J_{(η/β)T}(x − (η/β)u),  x⁺ = J_{ηT}(x − ηFy)."""
    _consume_current(F, rule)
    u = rule.direction(state.Fx)
    y = J.apply(state.x - (eta / beta) * u, eta / beta)
    Fy = F(y)
    z = state.x - eta * Fy
    x_new = J.apply(z, eta)
    rule.advance(state.Fx, Fy)
    return _advance(state, F, x_new, y, Fy, u, (z - x_new) / eta)


def step_gfbfs2(state, F, J, rule, eta, beta):
    """y = J_{(η/β)T}(x − (η/β)u),  x⁺ = βy + (1 − β)x − η(Fy − u)."""
    _consume_current(F, rule)
    u = rule.direction(state.Fx)
    y = J.apply(state.x - (eta / beta) * u, eta / beta)
    Fy = F(y)
    x_new = beta * y + (1.0 - beta) * state.x - eta * (Fy - u)
    rule.advance(state.Fx, Fy)
    return _advance(state, F, x_new, y, Fy, u)


def step_rfbs2(state, F, J, eta):
    """y = 2x − x⁻,  x⁺ = J_{ηT}(x − ηFy)."""
    y = 2.0 * state.x - state.x_prev
    Fy = F(y)
    z = state.x - eta * Fy
    x_new = J.apply(z, eta)
    return _advance(state, F, x_new, y, Fy, xi=(z - x_new) / eta)


def gr_average(state, tau):
    """y^k = ((τ − 1)/τ)x^k + (1/τ)y^{k-1}."""
    return ((tau - 1.0) / tau) * state.x + (1.0 / tau) * state.y_prev


def step_gr2(state, F, J, eta, tau):
    """y = ((τ−1)/τ)x + (1/τ)y⁻,  x⁺ = J_{ηT}(y − ηFx)."""
    F.charge()
    y = gr_average(state, tau)
    z = y - eta * state.Fx
    x_new = J.apply(z, eta)
    # Fy slot carries Fx^k here: GR never evaluates F at y
    return _advance(state, F, x_new, y, state.Fx, xi=(z - x_new) / eta)


def step_fw(state, F, eta):
    F.charge()
    x_new = state.x - eta * state.Fx
    return _advance(state, F, x_new, state.x, state.Fx)


def step_fbs(state, F, J, eta):
    F.charge()
    z = state.x - eta * state.Fx
    x_new = J.apply(z, eta)
    return _advance(state, F, x_new, state.x, state.Fx, xi=(z - x_new) / eta)


@dataclass
class SolverConfig:
    family: str
    eta: object = "auto"
    beta: float = 1.0
    direction: str = "EG"
    alpha1: float = None
    alpha2: float = None
    c: float = None
    tau: float = None
    rho: float = 0.0
    safety: float = 0.9
    max_iters: int = 1000
    max_fevals: int = None
    tol: float = 1e-10
    record_every: int = 1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.tau is not None and self.family != "GR2":
            raise ValueError("tau only applies to GR2")
        if self.family == "GR2":
            if self.tau is None:
                raise ValueError("GR2 needs tau")
            gr_regime(self.tau)
        if not 0.0 < self.beta <= 1.0:
            raise ValueError("beta must lie in (0, 1]")
        if self.eta != "auto" and not (isinstance(self.eta, (int, float)) and self.eta > 0):
            raise ValueError("eta must be positive or 'auto'")
        if not 0.0 < self.safety < 1.0:
            raise ValueError("safety factor must lie in (0, 1)")
        if self.max_iters < 0 or self.record_every < 1:
            raise ValueError("max_iters must be >= 0 and record_every >= 1")

    @property
    def needs_resolvent(self):
        return self.family not in NE_FAMILIES

    def rule(self):
        if self.family not in RULE_FAMILIES:
            return None
        return make_rule(self.direction, self.alpha1, self.alpha2, self.c)


def problem_constants(config, L, rule=None):
    k1, k2 = rule.kappas if rule is not None else (0.0, 0.0)
    beta = config.beta if config.family in RULE_FAMILIES else 1.0
    return ProblemConstants(L, config.rho, beta, k1, k2)


def resolve_eta(config, F, rule=None):
    if config.eta != "auto":
        return float(config.eta)
    L = F.lipschitz
    if L is None:
        raise ValueError("eta='auto' needs a Lipschitz constant; use a grid search instead")
    pc = problem_constants(config, L, rule)
    return config.safety * upper_step(config.family, pc, config.tau)


def make_stepper(config, F, J, rule, eta):
    fam, beta = config.family, config.beta
    if fam == "FW":
        return lambda s: step_fw(s, F, eta)
    if fam == "FBS":
        return lambda s: step_fbs(s, F, J, eta)
    if fam == "GEG":
        return lambda s: step_geg(s, F, rule, eta, beta)
    if fam == "GEG2":
        return lambda s: step_geg2(s, F, J, rule, eta, beta)
    if fam == "GFBFS2":
        return lambda s: step_gfbfs2(s, F, J, rule, eta, beta)
    if fam == "RFBS2":
        return lambda s: step_rfbs2(s, F, J, eta)
    return lambda s: step_gr2(s, F, J, eta, config.tau)


@dataclass(frozen=True)
class TraceRecord:
    k: int
    fevals: int
    revals: int
    residual: float
    rel_residual: float
    elapsed_ns: int
    P_k: float = None
    V_k: float = None


@dataclass
class Trace:
    records: list = field(default_factory=list)
    status: str = "max_iters"
    eta: float = None
    meta: dict = field(default_factory=dict)

    @property
    def final(self):
        return self.records[-1]

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records], dtype=float)


def _residual(config, F, J, state, eta):
    if config.family in NE_FAMILIES or J is None:
        return float(np.linalg.norm(state.Fx))
    return float(np.linalg.norm(fb_residual_vector(F, J, state.x, eta, state.Fx)))


def lyapunov_P(x, y_prev, x_prev, x_star, constants):
    """‖x − x*‖² + a‖x − y⁻‖² + b‖x − x⁻‖² with the certified weights a, b."""
    val = float(np.sum((x - x_star) ** 2))
    if constants.coef_y:
        val += constants.coef_y * float(np.sum((x - y_prev) ** 2))
    if constants.coef_x:
        val += constants.coef_x * float(np.sum((x - x_prev) ** 2))
    return val


def lyapunov_V_rfbs(x, x_prev, y_prev, x_star, F, eta, L, Fy_prev=None, Fx_star=None):
    """‖x−x*‖² + 2‖x−x⁻‖² + (1−√2Lη)‖x−y⁻‖² + 2η⟨Fy⁻ − Fx*, x − x⁻⟩."""
    if Fy_prev is None:
        Fy_prev = F.peek(y_prev)
    if Fx_star is None:
        Fx_star = F.peek(x_star)
    d = x - x_prev
    return (
        float(np.sum((x - x_star) ** 2))
        + 2.0 * float(d @ d)
        + (1.0 - math.sqrt(2.0) * L * eta) * float(np.sum((x - y_prev) ** 2))
        + 2.0 * eta * float((Fy_prev - Fx_star) @ d)
    )


def gr_v_coefficient(tau):
    """Weight on ‖x − x⁻‖² in the GR potential; it depends on the τ regime."""
    if gr_regime(tau) == "GR2_low":
        return tau * (tau - 1.0) / 2.0
    return (2.0 * tau + 2.0 - tau * tau) / tau * (tau - 1.0) / 2.0


def lyapunov_V_gr(y, x, x_prev, x_star, tau):
    """τ‖y − x*‖² + c(τ)‖x − x⁻‖²."""
    return tau * float(np.sum((y - x_star) ** 2)) + gr_v_coefficient(tau) * float(
        np.sum((x - x_prev) ** 2)
    )


def _lyapunov_fn(config, F, eta, rule, x_star):
    """Per-state potential for the trace, or None when not applicable."""
    if x_star is None:
        return None, None
    fam = config.family
    L = F.lipschitz
    if fam in RULE_FAMILIES and L is not None:
        pc = problem_constants(config, L, rule)
        c = constants_at(pc, eta, "GEG_NE", check=False)
        return "P_k", lambda s: lyapunov_P(s.x, s.y_prev, s.x_prev, x_star, c)
    if fam == "RFBS2" and L is not None:
        Fx_star = F.peek(x_star)
        return "V_k", lambda s: lyapunov_V_rfbs(
            s.x, s.x_prev, s.y_prev, x_star, F, eta, L, s.Fy_prev, Fx_star
        )
    if fam == "GR2":
        return "V_k", lambda s: lyapunov_V_gr(
            gr_average(s, config.tau), s.x, s.x_prev, x_star, config.tau
        )
    return None, None


def run(config, F, J=None, x0=None, x_star=None):
    """Run one solver to tolerance or budget; returns (final state, trace).

    The run works on fresh copies of F and J so counters are its own. The
    stopping metric is the residual relative to iterate 0. A non-finite
    iterate or a relative residual above 1e12 stops the run as "diverged".
    """
    if config.needs_resolvent and J is None:
        raise ValueError(f"{config.family} needs a resolvent")
    if not config.needs_resolvent and J is not None and not J.identity:
        raise ValueError(f"{config.family} solves equations; reduce the inclusion first")
    F = F.fresh()
    J = J.fresh() if J is not None else None
    rule = config.rule()
    eta = resolve_eta(config, F, rule)
    start = time.perf_counter_ns()
    state = init_state(F, x0, rule)
    step = make_stepper(config, F, J, rule, eta)
    lyap_name, lyap = _lyapunov_fn(config, F, eta, rule, x_star)
    trace = Trace(eta=eta, meta={"family": config.family, "residual_eta": eta})

    res0 = _residual(config, F, J, state, eta)

    def record(s, res):
        rel = res / res0 if res0 > GUARD else 0.0
        extra = {}
        if lyap is not None:
            extra[lyap_name] = lyap(s)
        trace.records.append(
            TraceRecord(
                s.k, F.evals, J.evals if J is not None else 0, res, rel,
                time.perf_counter_ns() - start, **extra,
            )
        )
        return rel

    rel = record(state, res0)
    status = "converged" if rel <= config.tol else "max_iters"
    while status == "max_iters" and state.k < config.max_iters:
        if config.max_fevals is not None and F.evals >= config.max_fevals:
            break
        state = step(state)
        finite = bool(np.all(np.isfinite(state.x)) and np.all(np.isfinite(state.Fx)))
        res = _residual(config, F, J, state, eta) if finite else math.inf
        rel = res / res0 if res0 > GUARD else 0.0
        if not finite or not rel <= DIVERGENCE_RATIO:
            status = "diverged"
        elif rel <= config.tol:
            status = "converged"
        if status != "max_iters" or state.k % config.record_every == 0:
            if finite:
                record(state, res)
            else:
                trace.records.append(
                    TraceRecord(state.k, F.evals, J.evals if J else 0, math.inf, math.inf,
                                time.perf_counter_ns() - start)
                )
    if trace.records[-1].k != state.k:
        record(state, _residual(config, F, J, state, eta))
    trace.status = status
    return state, trace


def trajectory(config, F, J, x0, steps, eta=None):
    """Yield (state_k, state_{k+1}) for ``steps`` iterations, counting on F and J as given."""
    rule = config.rule()
    if eta is None:
        eta = resolve_eta(config, F, rule)
    state = init_state(F, x0, rule)
    step = make_stepper(config, F, J, rule, eta)
    for _ in range(steps):
        nxt = step(state)
        yield state, nxt
        state = nxt


TRACE_HEADER = ("k", "fevals", "revals", "residual", "rel_residual", "elapsed_ns")


def _fmt(value):
    return "nan" if value is None else f"{value:.17g}"


def write_trace_csv(trace, path):
    """CSV with 17 significant digits; P_k / V_k columns appear when present."""
    extra = [n for n in ("P_k", "V_k") if any(getattr(r, n) is not None for r in trace.records)]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(TRACE_HEADER + tuple(extra)) + "\n")
        for r in trace.records:
            row = [str(r.k), str(r.fevals), str(r.revals), f"{r.residual:.17g}",
                   f"{r.rel_residual:.17g}", str(r.elapsed_ns)]
            row += [_fmt(getattr(r, n)) for n in extra]
            fh.write(",".join(row) + "\n")


def with_eta(config, eta):
    return replace(config, eta=float(eta))
