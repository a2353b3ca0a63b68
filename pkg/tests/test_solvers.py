import csv
import math

import numpy as np
import pytest

from egsolve import AffineMap, ForwardMap, SolverConfig, project_simplex, run
from egsolve.certificates import (
    best_iterate_bound,
    certify_all,
    gr_potential_decrease,
    inclusion_w_monotone,
    last_iterate_monotone,
    lyapunov_decrease,
    rfbs_potential_decrease,
)
from egsolve.directions import eg, past_eg
from egsolve.problems import QuadMinimaxSpec, gen_quad_minimax, make_known_solution_inclusion
from egsolve.prox import resolvent_simplex, resolvent_zero
from egsolve.solvers import (
    Trace,
    TraceRecord,
    init_state,
    lyapunov_P,
    lyapunov_V_gr,
    lyapunov_V_rfbs,
    step_fbs,
    step_fw,
    step_geg,
    step_geg2,
    step_gfbfs2,
    step_gr2,
    step_rfbs2,
    trajectory,
    write_trace_csv,
)
from egsolve.stepsizes import GOLDEN, ProblemConstants, StepOutOfRange, best_iterate_range, constants_at

ROT = AffineMap(np.array([[0.0, 1.0], [-1.0, 0.0]]))


def identity_map(p=1):
    return ForwardMap(lambda x: x.copy(), p, lipschitz=1.0)


def zero_map(p):
    return ForwardMap(lambda x: np.zeros_like(x), p, lipschitz=0.0)


@pytest.fixture(scope="module")
def quad():
    prob = gen_quad_minimax(QuadMinimaxSpec(6, 6, seed=2))
    return prob


@pytest.fixture(scope="module")
def known():
    return make_known_solution_inclusion(8, 7, seed=1)


def first_step(step, F, x0, seed_rule=None, **kw):
    s0 = init_state(F, x0, seed_rule)
    return s0, step(s0, F, **kw)


# ---- single steps ----

def test_geg_rotation_example():
    rule = eg()
    _, s1 = first_step(step_geg, ROT, [1.0, 0.0], rule, rule=rule, eta=0.5, beta=1.0)
    assert np.array_equal(s1.y_prev, [1.0, 0.5])
    assert np.array_equal(s1.x, [0.75, 0.5])
    assert float(s1.x @ s1.x) == 0.8125


def test_geg_fixed_point():
    F = AffineMap(np.eye(2), [-1.0, 2.0])
    x = np.array([1.0, -2.0])
    for rule in (eg(), past_eg()):
        _, s1 = first_step(step_geg, F, x, rule, rule=rule, eta=0.3, beta=1.0)
        assert np.array_equal(s1.y_prev, x) and np.array_equal(s1.x, x)


def test_eg_plus_extrapolation():
    rule = eg()
    x = np.array([1.0, 0.0])
    _, s1 = first_step(step_geg, ROT, x, rule, rule=rule, eta=0.25, beta=0.5)
    assert np.array_equal(s1.y_prev, x - 2 * 0.25 * ROT.matrix @ x)


def test_geg2_simplex_example():
    rule = eg()
    J = resolvent_simplex()
    _, s1 = first_step(step_geg2, zero_map(2), [2.0, 0.0], rule, J=J, rule=rule, eta=0.7, beta=1.0)
    assert np.array_equal(s1.y_prev, [1.0, 0.0]) and np.array_equal(s1.x, [1.0, 0.0])


def test_geg2_is_projected_extragradient(rng):
    M = rng.standard_normal((4, 4))
    F = AffineMap(M)
    J = resolvent_simplex()
    x = rng.standard_normal(4)
    eta = 0.2
    rule = eg()
    _, s1 = first_step(step_geg2, F, x, rule, J=J, rule=rule, eta=eta, beta=1.0)
    y = project_simplex(x - eta * M @ x)
    assert np.array_equal(s1.y_prev, y)
    assert np.array_equal(s1.x, project_simplex(x - eta * M @ y))


def test_gfbfs2_tseng_rotation():
    rule = eg()
    _, s1 = first_step(step_gfbfs2, ROT, [1.0, 0.0], rule, J=resolvent_zero(), rule=rule,
                       eta=0.5, beta=1.0)
    assert np.array_equal(s1.y_prev, [1.0, 0.5])
    assert np.array_equal(s1.x, [0.75, 0.5])


def test_gfbfs2_fixed_point(known):
    rule = eg()
    eta = 0.5 / known.F.lipschitz
    _, s1 = first_step(step_gfbfs2, known.F, known.x_star, rule, J=known.J, rule=rule,
                       eta=eta, beta=1.0)
    assert np.allclose(s1.y_prev, known.x_star, atol=1e-14)
    assert np.allclose(s1.x, known.x_star, atol=1e-14)


def _scalar_run(step, steps, **kw):
    F = identity_map()
    s = init_state(F, [1.0])
    xs, ys = [], []
    for _ in range(steps):
        s = step(s, F, J=resolvent_zero(), **kw)
        xs.append(float(s.x[0]))
        ys.append(float(s.y_prev[0]))
    return xs, ys


def test_rfbs_scalar_recursion():
    xs, ys = _scalar_run(step_rfbs2, 3, eta=0.5)
    assert xs == [0.5, 0.5, 0.25]
    assert ys == [1.0, 0.0, 0.5]


def test_gr_scalar_recursion():
    xs, ys = _scalar_run(step_gr2, 3, eta=0.5, tau=2.0)
    assert xs == [0.5, 0.5, 0.375]
    assert ys == [1.0, 0.75, 0.625]


def test_rfbs_and_gr_fixed_points(known):
    eta = 0.3 / known.F.lipschitz
    for step, kw in ((step_rfbs2, {}), (step_gr2, {"tau": GOLDEN})):
        s = init_state(known.F, known.x_star)
        for _ in range(3):
            s = step(s, known.F, known.J, eta, **kw)
        assert np.allclose(s.x, known.x_star, atol=1e-14)


def test_fw_rotation_identity():
    for eta in (0.1, 0.5, 1.3):
        s = init_state(ROT, [0.6, -0.8])
        for _ in range(20):
            nxt = step_fw(s, ROT, eta)
            n0, n1 = float(s.x @ s.x), float(nxt.x @ nxt.x)
            assert abs(n1 - (1 + eta * eta) * n0) <= 2 * math.ulp(n1)
            s = nxt


def test_fbs_with_zero_operator_is_fw(rng):
    F = AffineMap(rng.standard_normal((3, 3)))
    a = b = init_state(F, rng.standard_normal(3))
    for _ in range(10):
        a, b = step_fw(a, F, 0.1), step_fbs(b, F, resolvent_zero(), 0.1)
        assert np.array_equal(a.x, b.x)


def test_fw_geometric_decay():
    F = identity_map()
    s = init_state(F, [1.0])
    for k in range(1, 30):
        s = step_fw(s, F, 0.5)
        assert s.x[0] == 2.0 ** -k


# ---- evaluation accounting ----

@pytest.mark.parametrize("family, direction, fevals, revals", [
    ("GEG", "EG", lambda K: 2 * K, lambda K: 0),
    ("GEG", "PastEG", lambda K: K + 1, lambda K: 0),
    ("GEG", "Affine", lambda K: 2 * K, lambda K: 0),
    ("GEG2", "EG", lambda K: 2 * K, lambda K: 2 * K),
    ("GEG2", "PastEG", lambda K: K + 1, lambda K: 2 * K),
    ("GFBFS2", "EG", lambda K: 2 * K, lambda K: K),
    ("RFBS2", "EG", lambda K: K, lambda K: K),
    ("GR2", "EG", lambda K: K, lambda K: K),
    ("FW", "EG", lambda K: K, lambda K: 0),
    ("FBS", "EG", lambda K: K, lambda K: K),
])
def test_eval_accounting(family, direction, fevals, revals, known):
    K = 7
    kw = {"tau": GOLDEN} if family == "GR2" else {}
    if direction == "Affine":
        kw.update(alpha1=1.35, alpha2=-0.25)
    cfg = SolverConfig(family, eta=0.05, direction=direction, beta=0.9 if direction == "Affine" else 1.0,
                       max_iters=K, tol=0.0, **kw)
    J = None if family in ("GEG", "FW") else known.J
    x0 = known.x0 if J is not None else known.x_star + 0.1
    _, trace = run(cfg, known.F, J, x0)
    assert trace.final.k == K
    assert trace.final.fevals == fevals(K)
    assert trace.final.revals == revals(K)
    assert np.all(np.diff(trace.column("fevals")) >= 0)


def test_run_does_not_touch_caller_counters():
    prob = make_known_solution_inclusion(4, 4)
    run(SolverConfig("GEG2", eta=0.05, max_iters=5), prob.F, prob.J, prob.x0)
    assert prob.F.evals == 0 and prob.J.evals == 0


# ---- run ----

def test_run_converges_on_monotone_quad():
    prob = gen_quad_minimax(QuadMinimaxSpec(2, 2, seed=4))
    cfg = SolverConfig("GEG", eta="auto", max_iters=100_000, tol=1e-10)
    state, trace = run(cfg, prob.F, None, prob.x0)
    assert trace.status == "converged"
    assert trace.final.rel_residual <= 1e-10
    assert np.linalg.norm(state.x - prob.x_star) <= 1e-6 * (1 + np.linalg.norm(prob.x_star))


def test_run_fw_rotation_grows():
    cfg = SolverConfig("FW", eta=0.5, max_iters=100, tol=1e-12)
    _, trace = run(cfg, ROT, None, np.array([1.0, 0.0]))
    assert trace.status == "diverged" or trace.final.rel_residual >= (1 + 0.25) ** 50


def test_run_reports_divergence():
    cfg = SolverConfig("FW", eta=5.0, max_iters=1000)
    _, trace = run(cfg, ROT, None, np.array([1.0, 0.0]))
    assert trace.status == "diverged"
    assert trace.final.k < 1000


def test_run_zero_budget():
    cfg = SolverConfig("GEG", eta=0.1, max_iters=0)
    state, trace = run(cfg, ROT, None, np.array([1.0, 0.0]))
    assert len(trace.records) == 1 and trace.records[0].k == 0 and state.k == 0


def test_run_record_every_keeps_final(quad):
    cfg = SolverConfig("GEG", eta=0.01, max_iters=23, record_every=5, tol=0.0)
    _, trace = run(cfg, quad.F, None, quad.x0)
    assert [r.k for r in trace.records] == [0, 5, 10, 15, 20, 23]


def test_run_fevals_budget(quad):
    cfg = SolverConfig("GEG", eta=0.01, max_iters=10_000, max_fevals=100, tol=0.0)
    _, trace = run(cfg, quad.F, None, quad.x0)
    assert trace.final.fevals == 100 and trace.final.k == 50
    cfg = SolverConfig("GEG", direction="PastEG", eta=0.01, max_iters=10_000, max_fevals=100, tol=0.0)
    _, trace = run(cfg, quad.F, None, quad.x0)
    assert trace.final.k == 99


def test_run_is_deterministic(quad):
    cfg = SolverConfig("GEG", direction="PastEG", eta=0.02, max_iters=50)
    a, ta = run(cfg, quad.F, None, quad.x0)
    b, tb = run(cfg, quad.F, None, quad.x0)
    assert np.array_equal(a.x, b.x)
    assert ta.column("residual").tolist() == tb.column("residual").tolist()


def test_run_compatibility_checks(known):
    with pytest.raises(ValueError, match="reduce"):
        run(SolverConfig("GEG", eta=0.1), known.F, known.J, known.x0)
    with pytest.raises(ValueError, match="resolvent"):
        run(SolverConfig("RFBS2", eta=0.1), known.F, None, known.x0)


@pytest.mark.parametrize("kwargs", [
    dict(family="Adam"), dict(family="GEG", tau=1.5), dict(family="GR2"),
    dict(family="GR2", tau=3.0), dict(family="GEG", beta=0.0), dict(family="GEG", eta=-1.0),
    dict(family="GEG", safety=1.0), dict(family="GEG", max_iters=-1), dict(family="GEG", record_every=0),
])
def test_solver_config_validation(kwargs):
    with pytest.raises(ValueError):
        SolverConfig(**kwargs)


def test_auto_eta_needs_lipschitz():
    F = ForwardMap(lambda x: x, 2)
    with pytest.raises(ValueError, match="Lipschitz"):
        run(SolverConfig("GEG", eta="auto"), F, None, np.ones(2))


def test_auto_eta_value(quad):
    _, trace = run(SolverConfig("GEG", eta="auto", max_iters=1), quad.F, None, quad.x0)
    assert trace.eta == pytest.approx(0.9 / quad.F.lipschitz, rel=1e-14)


# ---- potentials ----

def test_initial_potentials(known):
    x0, xs = known.x0, known.x_star
    d0 = float(np.sum((x0 - xs) ** 2))
    L = known.F.lipschitz
    eta = 0.1 / L
    pc = ProblemConstants(L, 0.0, 0.9, 0.0875, 0.035)
    c = constants_at(pc, eta, "GEG_NE", check=False)
    assert lyapunov_P(x0, x0, x0, xs, c) == d0
    assert lyapunov_V_rfbs(x0, x0, x0, xs, known.F, eta, L) == d0
    assert lyapunov_V_gr(x0, x0, x0, xs, 1.5) == 1.5 * d0


def test_potentials_vanish_at_solution(known):
    xs = known.x_star
    L = known.F.lipschitz
    assert lyapunov_V_rfbs(xs, xs, xs, xs, known.F, 0.1 / L, L) == 0.0
    assert lyapunov_V_gr(xs, xs, xs, xs, 2.0) == 0.0


def test_trace_carries_potentials(quad, known):
    cfg = SolverConfig("GEG", eta=0.5 / quad.F.lipschitz, max_iters=5)
    _, trace = run(cfg, quad.F, None, quad.x0, quad.x_star)
    assert trace.records[0].P_k == float(np.sum((quad.x0 - quad.x_star) ** 2))
    cfg = SolverConfig("GR2", tau=1.5, eta=0.5 / known.F.lipschitz, max_iters=5)
    _, trace = run(cfg, known.F, known.J, known.x0, known.x_star)
    assert trace.records[0].V_k == pytest.approx(1.5 * float(np.sum((known.x0 - known.x_star) ** 2)))


def test_distance_to_solution_non_increasing(quad):
    eta = 0.9 / quad.F.lipschitz
    cfg = SolverConfig("GEG", eta=eta)
    prev = np.inf
    for s, _ in trajectory(cfg, quad.F.fresh(), None, quad.x0, 300, eta):
        d = float(np.linalg.norm(s.x - quad.x_star))
        assert d <= prev * (1 + 1e-12)
        prev = d


# ---- certificates on small instances ----

def _all_pass(results):
    assert results, "no checks ran"
    for r in results:
        assert r.passed, r.line()


@pytest.mark.parametrize("direction, beta, kw", [
    ("EG", 1.0, {}), ("PastEG", 1.0, {}), ("EG", 0.5, {}),
    ("Affine", 0.95, {"alpha1": 1.35, "alpha2": -0.25}),
])
def test_geg_lyapunov_decrease(quad, direction, beta, kw):
    cfg = SolverConfig("GEG", direction=direction, beta=beta, **kw)
    rule = cfg.rule()
    pc = ProblemConstants(quad.F.lipschitz, 0.0, beta, *rule.kappas)
    eta = 0.9 * best_iterate_range(pc).hi
    _all_pass(lyapunov_decrease(cfg, quad.F, None, quad.x0, quad.x_star, eta, 300))


def test_geg_best_iterate_bound(quad):
    cfg = SolverConfig("GEG")
    eta = 0.9 / quad.F.lipschitz
    _all_pass(best_iterate_bound(cfg, quad.F, quad.x0, quad.x_star, eta, [10, 100, 300]))


@pytest.mark.parametrize("direction", ["EG", "PastEG"])
def test_last_iterate_monotone(quad, direction):
    cfg = SolverConfig("GEG", direction=direction)
    eta = (0.5 if direction == "EG" else 0.35) / quad.F.lipschitz
    _all_pass(last_iterate_monotone(cfg, quad.F, quad.x0, eta, 300))


def test_last_iterate_rejects_step_outside_range(quad):
    with pytest.raises(StepOutOfRange):
        last_iterate_monotone(SolverConfig("GEG"), quad.F, quad.x0, 0.9 / quad.F.lipschitz, 10)


def test_inclusion_certificates(known):
    L = known.F.lipschitz
    args = (known.F, known.J, known.x0, known.x_star)
    _all_pass(lyapunov_decrease(SolverConfig("GEG2"), *args, 0.9 / (2 * L), 300))
    _all_pass(lyapunov_decrease(SolverConfig("GFBFS2"), *args, 0.9 / L, 300))
    _all_pass(rfbs_potential_decrease(SolverConfig("RFBS2"), *args, 0.9 * (math.sqrt(2) - 1) / L, 300))
    for tau in (1.5, 2.2):
        eta = 0.9 * (tau if tau < GOLDEN else (2 * tau + 2 - tau * tau) / tau) / (2 * L)
        _all_pass(gr_potential_decrease(SolverConfig("GR2", tau=tau), *args, eta, 300))
    _all_pass(inclusion_w_monotone(SolverConfig("GEG2"), known.F, known.J, known.x0, 0.4 / L, 300))
    _all_pass(inclusion_w_monotone(SolverConfig("RFBS2"), known.F, known.J, known.x0, 0.3 / L, 300))


def test_certify_all_zero_steps_is_vacuous(known):
    cfgs = [SolverConfig("GEG2"), SolverConfig("RFBS2"), SolverConfig("GR2", tau=1.5),
            SolverConfig("FBS")]
    res = certify_all(known, cfgs, lambda c: 0.1 / known.F.lipschitz, 0)
    assert all(r.passed for r in res)
    assert any(r.skipped for r in res)


def test_certify_all_flags_oversized_step(quad):
    eta = 2.0 / quad.F.lipschitz
    res = certify_all(quad, [SolverConfig("GEG")], lambda c: eta, 50)
    assert not all(r.passed for r in res)
    assert any("above upper bound" in r.line() for r in res)


def test_certify_all_skips_last_iterate_outside_range(quad):
    eta = 0.9 / quad.F.lipschitz
    res = certify_all(quad, [SolverConfig("GEG")], lambda c: eta, 50)
    skipped = [r for r in res if r.skipped]
    assert len(skipped) == 1 and "last-iterate" in skipped[0].name
    assert all(r.passed for r in res)


# ---- reductions ----

def forward_reflected_ys(F, J, x0, eta, steps):
    """y⁰ = J(x⁰ − ηFx⁰), y^{k+1} = J(y^k − η(2Fy^k − Fy^{k−1})) with Fy^{−1} = Fx⁰."""
    Fy_prev = F.peek(x0)
    y = J.peek(x0 - eta * Fy_prev, eta)
    ys = [y]
    for _ in range(steps - 1):
        Fy = F.peek(y)
        y = J.peek(y - eta * (2 * Fy - Fy_prev), eta)
        Fy_prev = Fy
        ys.append(y)
    return ys


def test_gfbfs2_past_direction_matches_forward_reflected(known):
    eta = 0.3 / known.F.lipschitz
    cfg = SolverConfig("GFBFS2", direction="PastEG", eta=eta)
    ys = [nxt.y_prev for _, nxt in trajectory(cfg, known.F.fresh(), known.J, known.x0, 10, eta)]
    for a, b in zip(ys, forward_reflected_ys(known.F, known.J, known.x0, eta, 10)):
        assert np.max(np.abs(a - b)) <= 1e-14


# ---- trace CSV ----

def test_trace_csv_layout(tmp_path, quad):
    cfg = SolverConfig("GEG", eta=0.05, max_iters=3)
    _, trace = run(cfg, quad.F, None, quad.x0, quad.x_star)
    path = tmp_path / "t.csv"
    write_trace_csv(trace, path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["k", "fevals", "revals", "residual", "rel_residual", "elapsed_ns", "P_k"]
    assert len(rows) == 5
    assert float(rows[1][3]) == trace.records[0].residual


def test_trace_csv_missing_values(tmp_path):
    trace = Trace([TraceRecord(0, 0, 0, 1.0, 1.0, 0, None, 2.5), TraceRecord(1, 1, 1, 0.5, 0.5, 10)])
    path = tmp_path / "t.csv"
    write_trace_csv(trace, path)
    lines = open(path).read().splitlines()
    assert lines[0].endswith(",V_k")
    assert lines[1].endswith(",2.5") and lines[2].endswith(",nan")
