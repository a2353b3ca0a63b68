"""Runtime checks of the convergence inequalities along actual trajectories.

Every check runs the scheme, evaluates both sides of the inequality at each
iteration and reports the worst violation relative to ``1 + value_0``.
Trajectories run on fresh operator copies, so no caller counter is disturbed.
"""

from dataclasses import dataclass

import numpy as np

from .prox import resolvent_zero as _identity
from .solvers import (
    gr_average,
    gr_v_coefficient,
    lyapunov_P,
    lyapunov_V_gr,
    lyapunov_V_rfbs,
    problem_constants,
    trajectory,
)
from .stepsizes import StepOutOfRange, constants_at, gr_regime, last_iterate_range


@dataclass
class CertificateResult:
    name: str
    passed: bool
    worst_violation: float
    worst_k: int
    tol: float
    checks: int
    note: str = ""
    skipped: bool = False

    def line(self):
        if self.skipped:
            return f"SKIP {self.name}: {self.note}"
        verdict = "PASS" if self.passed else "FAIL"
        if self.note:
            return f"{verdict} {self.name}: {self.note}"
        return (f"{verdict} {self.name}: worst violation {self.worst_violation:.3e} "
                f"at k={self.worst_k} over {self.checks} checks (tol {self.tol:.1e})")


def skipped(name, reason):
    return CertificateResult(name, True, 0.0, -1, 0.0, 0, reason, skipped=True)


def failed(name, reason):
    return CertificateResult(name, False, float("inf"), -1, 0.0, 0, reason)


class _Worst:
    def __init__(self, name, tol, scale):
        self.name, self.tol, self.scale = name, tol, scale
        self.value, self.k, self.n = -np.inf, -1, 0

    def add(self, k, lhs, rhs):
        """Record the inequality lhs <= rhs at iteration k."""
        v = (lhs - rhs) / self.scale
        self.n += 1
        if v > self.value:
            self.value, self.k = v, k

    def result(self):
        worst = max(self.value, 0.0) if self.n else 0.0
        return CertificateResult(self.name, worst <= self.tol, worst, self.k, self.tol, self.n)


def _sq(v):
    return float(v @ v)


def best_iterate_bound(config, F, x0, x_star, eta, Ks, slack=1e-9):
    """min_{k<=K}‖u^k‖² <= β²D/(C1η²(K+1)) and the Fy, Fx analogues, D = ‖x⁰ − x*‖².

    For the EG rule u^k = Fx^k, so the first bound is the bound on ‖Fx^k‖².
    """
    L = F.lipschitz
    rule = config.rule()
    pc = problem_constants(config, L, rule)
    c = constants_at(pc, eta, "GEG_NE")
    D = _sq(x0 - x_star)
    kmax = max(Ks)
    mins = {"u": np.inf, "Fy": np.inf, "Fx": np.inf}
    bounds = {
        "u": pc.beta**2 * D / (c.C1 * eta**2) if c.C1 > 0 else None,
        "Fy": D / (c.Lambda * eta**2) if c.Lambda > 0 else None,
        "Fx": c.Gamma * D if c.Gamma is not None else None,
    }
    results = {key: _Worst(f"best-iterate min|{key}|^2", slack, 1.0) for key in mins}
    Kset = set(Ks)
    for s, nxt in trajectory(config, F.fresh(), _identity(), x0, kmax + 1, eta):
        k = s.k
        mins["u"] = min(mins["u"], _sq(nxt.u_prev))
        mins["Fy"] = min(mins["Fy"], _sq(nxt.Fy_prev))
        mins["Fx"] = min(mins["Fx"], _sq(s.Fx))
        if k in Kset:
            for key, b in bounds.items():
                if b is not None:
                    bound = b / (k + 1)
                    results[key].add(k, mins[key] / bound, 1.0)
    return [r.result() for key, r in results.items() if bounds[key] is not None]


def lyapunov_decrease(config, F, J, x0, x_star, eta, steps, tol=1e-9, family=None):
    """P_k non-increasing and P_k − P_{k+1} >= C1‖y−x‖² + C1‖x⁺−y‖² + C2‖x⁺−x‖².

    Applies to GEG (equations) and to GEG2/GFBFS2 (inclusions).
    """
    L = F.lipschitz
    rule = config.rule()
    pc = problem_constants(config, L, rule)
    if family is None:
        family = {"GEG": "GEG_NE", "GEG2": "GEG2_NI_best", "GFBFS2": "GFBFS2"}[config.family]
    c = constants_at(pc, eta, family)
    J = J if J is not None else _identity()
    P0 = _sq(x0 - x_star)
    mono = _Worst(f"{config.family} potential non-increasing", tol, 1.0 + P0)
    dec = _Worst(f"{config.family} potential decrease", tol, 1.0 + P0)
    P = None
    for s, nxt in trajectory(config, F.fresh(), J, x0, steps, eta):
        if P is None:
            P = lyapunov_P(s.x, s.y_prev, s.x_prev, x_star, c)
        P_next = lyapunov_P(nxt.x, nxt.y_prev, nxt.x_prev, x_star, c)
        y = nxt.y_prev
        drop = c.C1 * _sq(y - s.x) + c.C1 * _sq(nxt.x - y) + c.C2 * _sq(nxt.x - s.x)
        mono.add(s.k, P_next, P)
        dec.add(s.k, drop, P - P_next)
        P = P_next
    return [mono.result(), dec.result()]


def last_iterate_monotone(config, F, x0, eta, steps, tol=1e-9):
    """‖Fx^k‖² + ω‖Fx^k − Fy^{k-1}‖² non-increasing (equations, β = 1, κ2 = 0).

    With the EG rule this also checks ‖Fx^{k+1}‖² <= ‖Fx^k‖² − ψ‖Fx^k − Fy^k‖².
    """
    rule = config.rule()
    pc = problem_constants(config, F.lipschitz, rule)
    if not last_iterate_range(pc).contains(eta):
        lo, hi = last_iterate_range(pc).certified
        raise StepOutOfRange(f"eta = {eta:.6g} outside the last-iterate range [{lo:.6g}, {hi:.6g}]")
    c = constants_at(pc, eta, "GEG_NE")
    if c.omega is None:
        raise ValueError("last-iterate weight undefined at this stepsize")
    Q0 = _sq(F.peek(x0))
    mono = _Worst(f"{config.direction} last-iterate quantity non-increasing", tol, 1.0 + Q0)
    eg = _Worst("EG squared residual decrease", tol, 1.0 + Q0) if rule.kind == "EG" else None
    for s, nxt in trajectory(config, F.fresh(), _identity(), x0, steps, eta):
        q = _sq(s.Fx) + c.omega * _sq(s.Fx - s.Fy_prev)
        q_next = _sq(nxt.Fx) + c.omega * _sq(nxt.Fx - nxt.Fy_prev)
        mono.add(s.k, q_next, q)
        if eg is not None:
            eg.add(s.k, _sq(nxt.Fx), _sq(s.Fx) - c.psi_eg * _sq(s.Fx - nxt.Fy_prev))
    out = [mono.result()]
    if eg is not None:
        out.append(eg.result())
    return out


def inclusion_w_monotone(config, F, J, x0, eta, steps, tol=1e-8):
    """‖w^k‖² + ω‖Fx^k − Fy^{k-1}‖² non-increasing from k = 1, w^k = Fx^k + ξ^k.

    For GEG2 (β = 1) the weight comes from the inclusion last-iterate result;
    for RFBS2 the weight is 2L²η²/(1 − 2L²η²) and the drop term
    (1 − 4L²η²)/(1 − 2L²η²)·‖Fy^k − Fx^k + ξ^{k+1} − ξ^k‖² is checked too.
    """
    L = F.lipschitz
    if config.family == "GEG2":
        pc = problem_constants(config, L, config.rule())
        c = constants_at(pc, eta, "GEG2_NI_last")
        omega, drop_coef = c.omega, None
    elif config.family == "RFBS2":
        c = constants_at(problem_constants(config, L), eta, "RFBS2")
        omega, drop_coef = c.omega_rfbs, c.w_decrease_rfbs
    else:
        raise ValueError("w-monotonicity is checked for GEG2 and RFBS2")
    W = None
    mono = _Worst(f"{config.family} w-sequence non-increasing", tol, 1.0)
    dec = _Worst(f"{config.family} w-sequence decrease", tol, 1.0) if drop_coef is not None else None
    for s, nxt in trajectory(config, F.fresh(), J, x0, steps, eta):
        if s.xi is None:
            continue
        w, w_next = s.Fx + s.xi, nxt.Fx + nxt.xi
        if W is None:
            W = _sq(w) + omega * _sq(s.Fx - s.Fy_prev)
            mono.scale = 1.0 + W
            if dec is not None:
                dec.scale = 1.0 + W
        W_next = _sq(w_next) + omega * _sq(nxt.Fx - nxt.Fy_prev)
        mono.add(s.k, W_next, W)
        if dec is not None:
            drop = drop_coef * _sq(nxt.Fy_prev - s.Fx + nxt.xi - s.xi)
            dec.add(s.k, W_next, W - drop)
        W = W_next
    return [mono.result()] + ([dec.result()] if dec is not None else [])


def rfbs_potential_decrease(config, F, J, x0, x_star, eta, steps, tol=1e-8, start=0):
    """V_{k+1} <= V_k − [1 − (1+√2)Lη](‖y^k − x^k‖² + ‖x^k − y^{k-1}‖²)."""
    L = F.lipschitz
    c = constants_at(problem_constants(config, L), eta, "RFBS2")
    Fx_star = F.peek(x_star)

    def V(s):
        return lyapunov_V_rfbs(s.x, s.x_prev, s.y_prev, x_star, F, eta, L, s.Fy_prev, Fx_star)

    res = _Worst(f"RFBS2 potential decrease (k >= {start})", tol, 1.0)
    for s, nxt in trajectory(config, F.fresh(), J, x0, steps, eta):
        v, v_next = V(s), V(nxt)
        if s.k == 0:
            res.scale = 1.0 + v
        if s.k < start:
            continue
        y = nxt.y_prev
        drop = c.decrease_rfbs * (_sq(y - s.x) + _sq(s.x - s.y_prev))
        res.add(s.k, v_next, v - drop)
    return [res.result()]


def gr_potential_decrease(config, F, J, x0, x_star, eta, steps, tol=1e-8, start=0):
    """τ‖y^k − x*‖² + c(τ)‖x^k − x^{k-1}‖² decreases by the regime's drop terms."""
    tau = config.tau
    family = gr_regime(tau)
    c = constants_at(problem_constants(config, F.lipschitz), eta, family, tau)
    assert abs(c.v_coef_gr - gr_v_coefficient(tau)) <= 1e-15 * max(1.0, c.v_coef_gr)
    res = _Worst(f"GR2 potential decrease, tau={tau:g} (k >= {start})", tol, 1.0)
    for s, nxt in trajectory(config, F.fresh(), J, x0, steps, eta):
        y, y_next = nxt.y_prev, gr_average(nxt, tau)
        v = lyapunov_V_gr(y, s.x, s.x_prev, x_star, tau)
        v_next = lyapunov_V_gr(y_next, nxt.x, nxt.x_prev, x_star, tau)
        if s.k == 0:
            res.scale = 1.0 + v
        if s.k < start:
            continue
        drop = c.decrease_y_gr * _sq(s.x - y) + c.decrease_x_gr * _sq(s.x - s.x_prev)
        res.add(s.k, v_next, v - drop)
    return [res.result()]


def _guarded(name, check, optional=False):
    """Run one check; an out-of-range stepsize fails it, or skips it when optional."""
    try:
        return check()
    except StepOutOfRange as exc:
        return [skipped(name, str(exc)) if optional else failed(name, str(exc))]


def certify_all(problem, configs, eta_of, steps):
    """Run every applicable check for each config; ``eta_of(config)`` picks the stepsize.

    A stepsize outside the range a check certifies fails that check, except
    for the last-iterate checks, whose narrower ranges only cause a skip.
    """
    out = []
    F, J, x0, x_star = problem.F, problem.J, problem.x0, problem.x_star
    for cfg in configs:
        eta = eta_of(cfg)
        fam = cfg.family
        tag = f"{fam}/{cfg.direction}" if fam in ("GEG", "GEG2", "GFBFS2") else fam
        if fam == "GEG" and J is None:
            out += _guarded(f"{tag} potential decrease", lambda: lyapunov_decrease(
                cfg, F, None, x0, x_star, eta, steps))
            Ks = sorted(k for k in {10, 100, 1000, steps} if 0 < k <= steps)
            if Ks:
                out += _guarded(f"{tag} best-iterate bound", lambda: best_iterate_bound(
                    cfg, F, x0, x_star, eta, Ks))
            if cfg.beta == 1.0 and cfg.rule().kappas[1] == 0:
                out += _guarded(f"{tag} last-iterate monotonicity", lambda: last_iterate_monotone(
                    cfg, F, x0, eta, steps), optional=True)
        elif fam in ("GEG2", "GFBFS2"):
            out += _guarded(f"{tag} potential decrease", lambda: lyapunov_decrease(
                cfg, F, J, x0, x_star, eta, steps))
            if fam == "GEG2" and cfg.beta == 1.0:
                out += _guarded(f"{tag} w-sequence", lambda: inclusion_w_monotone(
                    cfg, F, J, x0, eta, steps), optional=True)
        elif fam == "RFBS2":
            out += _guarded(f"{tag} potential decrease", lambda: rfbs_potential_decrease(
                cfg, F, J, x0, x_star, eta, steps))
            out += _guarded(f"{tag} w-sequence", lambda: inclusion_w_monotone(
                cfg, F, J, x0, eta, steps))
        elif fam == "GR2":
            out += _guarded(f"{tag} potential decrease", lambda: gr_potential_decrease(
                cfg, F, J, x0, x_star, eta, steps))
        else:
            out.append(skipped(tag, "no certificate for this scheme"))
    return out
