"""Experiment configuration, execution and reporting behind the command line.

A config is a JSON object with a fixed schema; unknown keys are rejected.
``parse_config`` fills defaults and validates, and ``ExperimentConfig.to_dict``
serializes back, so parse/serialize round-trips are idempotent.
"""

import json
import math
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

from .certificates import certify_all
from .linops import tseng_hat
from .problems import (
    LogitAmbiguousSpec,
    MatrixGameSpec,
    QuadMinimaxSpec,
    gen_logit_ambiguous,
    gen_matrix_game,
    gen_quad_minimax,
    make_known_solution_inclusion,
    write_matrix_csv,
)
from .prox import resolvent_zero
from .solvers import NE_FAMILIES, RULE_FAMILIES, SolverConfig, run, write_trace_csv
from .stepsizes import LemmaViolation, ProblemConstants, check_interval_lemmas, upper_step


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending field."""


PROBLEM_DEFAULTS = {
    "quad": {"p1": 100, "p2": 100, "d_lower": 0.1, "eigen_mode": "clip", "constrained": False},
    "game": {"family": "family1", "q": 50, "alpha": 1.0, "theta": 0.005},
    "logit": {"path": None, "m": 3, "noise": 1.0, "gamma": 5e-4, "N": 100, "d": 20},
    "known": {"p1": 50, "p2": 50, "d_lower": 0.1},
}

ALGORITHM_DEFAULTS = {
    "label": None,
    "family": None,
    "eta": "grid",
    "beta": 1.0,
    "direction": "EG",
    "alpha1": None,
    "alpha2": None,
    "c": None,
    "tau": None,
    "rho": 0.0,
    "safety": 0.9,
}

TOP_DEFAULTS = {
    "name": "experiment",
    "problem": None,
    "reduction": None,
    "algorithms": None,
    "instances": 1,
    "budget": 1000,
    "mode": "iterations",
    "tol": 1e-10,
    "record_every": 1,
    "eta_grid": None,
    "grid_budget": 1000,
    "seed_base": 0,
    "output": "out",
}

GRID_SCALES = ("absolute", "inverse_lipschitz")


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    problem: dict
    algorithms: list
    reduction: dict = None
    instances: int = 1
    budget: int = 1000
    mode: str = "iterations"
    tol: float = 1e-10
    record_every: int = 1
    eta_grid: dict = None
    grid_budget: int = 1000
    seed_base: int = 0
    output: str = "out"

    def to_dict(self):
        return asdict(self)

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @property
    def has_constraints(self):
        kind = self.problem["kind"]
        return kind != "quad" or bool(self.problem["constrained"])

    @property
    def has_solution(self):
        kind = self.problem["kind"]
        return kind == "known" or (kind == "quad" and not self.problem["constrained"])


# ---- validation helpers ----

def _fields(obj, defaults, where):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = sorted(set(obj) - set(defaults))
    if unknown:
        raise ConfigError(f"{where}.{unknown[0]}: unknown key")
    out = dict(defaults)
    out.update(obj)
    return out


def _int(value, where, minimum):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where}: expected an integer")
    if value < minimum:
        raise ConfigError(f"{where}: must be >= {minimum}")
    return value


def _real(value, where, positive=False, optional=False):
    if value is None and optional:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number")
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(f"{where}: must be finite")
    if positive and value <= 0:
        raise ConfigError(f"{where}: must be positive")
    return value


def _choice(value, where, options):
    if value not in options:
        raise ConfigError(f"{where}: expected one of {', '.join(map(str, options))}")
    return value


def _problem(obj):
    if not isinstance(obj, dict):
        raise ConfigError("problem: expected an object")
    kind = _choice(obj.get("kind"), "problem.kind", tuple(PROBLEM_DEFAULTS))
    body = {k: v for k, v in obj.items() if k != "kind"}
    p = _fields(body, PROBLEM_DEFAULTS[kind], "problem")
    if kind in ("quad", "known"):
        lo = 2 if kind == "known" else 1
        p["p1"] = _int(p["p1"], "problem.p1", lo)
        p["p2"] = _int(p["p2"], "problem.p2", lo)
        p["d_lower"] = _real(p["d_lower"], "problem.d_lower")
    if kind == "quad":
        p["eigen_mode"] = _choice(p["eigen_mode"], "problem.eigen_mode", ("clip", "uniform"))
        if not isinstance(p["constrained"], bool):
            raise ConfigError("problem.constrained: expected true or false")
    elif kind == "game":
        p["family"] = _choice(p["family"], "problem.family", ("family1", "family2", "burglar"))
        p["q"] = _int(p["q"], "problem.q", 1)
        p["alpha"] = _real(p["alpha"], "problem.alpha", positive=True)
        p["theta"] = _real(p["theta"], "problem.theta", positive=True)
    elif kind == "logit":
        if p["path"] is not None and not isinstance(p["path"], str):
            raise ConfigError("problem.path: expected a string or null")
        p["m"] = _int(p["m"], "problem.m", 1)
        p["N"] = _int(p["N"], "problem.N", 1)
        p["d"] = _int(p["d"], "problem.d", 1)
        p["noise"] = _real(p["noise"], "problem.noise")
        p["gamma"] = _real(p["gamma"], "problem.gamma")
        if p["noise"] < 0 or p["gamma"] < 0:
            raise ConfigError("problem.noise/gamma: must be nonnegative")
    return {"kind": kind, **p}


def _algorithm(obj, i, top):
    where = f"algorithms[{i}]"
    a = _fields(obj, ALGORITHM_DEFAULTS, where)
    a["family"] = _choice(a["family"], f"{where}.family",
                          ("FW", "FBS", "GEG", "GEG2", "GFBFS2", "RFBS2", "GR2"))
    eta = a["eta"]
    if eta not in ("auto", "grid"):
        a["eta"] = _real(eta, f"{where}.eta", positive=True)
    for key in ("beta", "safety"):
        a[key] = _real(a[key], f"{where}.{key}", positive=True)
    a["rho"] = _real(a["rho"], f"{where}.rho")
    for key in ("alpha1", "alpha2", "c", "tau"):
        a[key] = _real(a[key], f"{where}.{key}", optional=True)
    if a["label"] is None:
        a["label"] = a["family"] if a["family"] not in RULE_FAMILIES else f"{a['family']}-{a['direction']}"
    if not isinstance(a["label"], str) or not a["label"] or "/" in a["label"]:
        raise ConfigError(f"{where}.label: expected a nonempty name without '/'")
    try:
        cfg = solver_config(a)
        rule = cfg.rule()
        if rule is not None:
            ProblemConstants(1.0, cfg.rho, cfg.beta, *rule.kappas)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None

    ne = a["family"] in NE_FAMILIES
    reduced = ne and top["reduction"] is not None
    if ne and top["has_constraints"] and top["reduction"] is None:
        raise ConfigError(f"{where}.family: {a['family']} solves equations but the problem has "
                          "a constraint operator; set 'reduction'")
    no_lipschitz = reduced or top["kind"] == "logit"
    if a["eta"] == "auto" and no_lipschitz:
        raise ConfigError(f"{where}.eta: 'auto' needs a Lipschitz constant, which this operator lacks")
    if a["eta"] == "auto" and a["family"] in ("FW", "FBS"):
        raise ConfigError(f"{where}.eta: {a['family']} has no certified stepsize")
    if a["eta"] == "grid":
        grid = top["eta_grid"]
        if grid is None:
            raise ConfigError(f"{where}.eta: 'grid' needs a top-level eta_grid")
        if grid["scale"] == "inverse_lipschitz" and no_lipschitz:
            raise ConfigError(f"{where}.eta: eta_grid scale 'inverse_lipschitz' needs a Lipschitz constant")
    return a


def _eta_grid(obj):
    if obj is None:
        return None
    g = _fields(obj, {"values": None, "scale": "absolute"}, "eta_grid")
    if not isinstance(g["values"], list) or not g["values"]:
        raise ConfigError("eta_grid.values: expected a nonempty list")
    g["values"] = [_real(v, f"eta_grid.values[{i}]", positive=True) for i, v in enumerate(g["values"])]
    g["scale"] = _choice(g["scale"], "eta_grid.scale", GRID_SCALES)
    return g


def parse_config(obj):
    """Validate a config object and fill defaults."""
    top = _fields(obj, TOP_DEFAULTS, "config")
    if top["problem"] is None:
        raise ConfigError("config.problem: required")
    if top["algorithms"] is None:
        raise ConfigError("config.algorithms: required")
    if not isinstance(top["name"], str):
        raise ConfigError("config.name: expected a string")
    problem = _problem(top["problem"])
    reduction = top["reduction"]
    if reduction is not None:
        reduction = _fields(reduction, {"lambda": 0.5}, "reduction")
        reduction["lambda"] = _real(reduction["lambda"], "reduction.lambda", positive=True)
    has_constraints = problem["kind"] != "quad" or problem["constrained"]
    if reduction is not None and not has_constraints:
        raise ConfigError("reduction: the problem has no constraint operator to reduce")
    eta_grid = _eta_grid(top["eta_grid"])
    algs = top["algorithms"]
    if not isinstance(algs, list) or not algs:
        raise ConfigError("config.algorithms: expected a nonempty list")
    ctx = {"reduction": reduction, "has_constraints": has_constraints,
           "kind": problem["kind"], "eta_grid": eta_grid}
    algorithms = [_algorithm(a, i, ctx) for i, a in enumerate(algs)]
    labels = [a["label"] for a in algorithms]
    dup = sorted({x for x in labels if labels.count(x) > 1})
    if dup:
        raise ConfigError(f"algorithms.label: duplicate label {dup[0]!r}")
    mode = _choice(top["mode"], "config.mode", ("iterations", "fevals"))
    if not isinstance(top["output"], str):
        raise ConfigError("config.output: expected a string")
    return ExperimentConfig(
        name=top["name"],
        problem=problem,
        algorithms=algorithms,
        reduction=reduction,
        instances=_int(top["instances"], "config.instances", 1),
        budget=_int(top["budget"], "config.budget", 0),
        mode=mode,
        tol=_real(top["tol"], "config.tol"),
        record_every=_int(top["record_every"], "config.record_every", 1),
        eta_grid=eta_grid,
        grid_budget=_int(top["grid_budget"], "config.grid_budget", 1),
        seed_base=_int(top["seed_base"], "config.seed_base", 0),
        output=top["output"],
    )


def loads_config(text, source="<string>"):
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return parse_config(obj)


def load_config(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return loads_config(text, str(path))


def preset_names():
    root = resources.files("egsolve") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_preset(name):
    root = resources.files("egsolve") / "presets"
    res = root / f"{name}.json"
    if not res.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return loads_config(res.read_text(), f"preset {name}")


# ---- building problems and solver configs ----

def build_problem(spec, seed):
    kind = spec["kind"]
    if kind == "quad":
        return gen_quad_minimax(QuadMinimaxSpec(
            spec["p1"], spec["p2"], spec["d_lower"], spec["eigen_mode"], seed, spec["constrained"]))
    if kind == "known":
        return make_known_solution_inclusion(spec["p1"], spec["p2"], seed, spec["d_lower"])
    if kind == "game":
        return gen_matrix_game(MatrixGameSpec(spec["family"], spec["q"], spec["alpha"], spec["theta"], seed))
    return gen_logit_ambiguous(LogitAmbiguousSpec(
        spec["path"], spec["m"], spec["noise"], spec["gamma"], seed, spec["N"], spec["d"]))


def solver_config(alg, eta=None, max_iters=1000, max_fevals=None, tol=1e-10, record_every=1):
    if eta is None:
        eta = "auto" if alg["eta"] in ("auto", "grid") else alg["eta"]
    fam = alg["family"]
    return SolverConfig(
        family=fam,
        eta=eta,
        beta=alg["beta"] if fam in RULE_FAMILIES else 1.0,
        direction=alg["direction"],
        alpha1=alg["alpha1"],
        alpha2=alg["alpha2"],
        c=alg["c"],
        tau=alg["tau"],
        rho=alg["rho"],
        safety=alg["safety"],
        max_iters=max_iters,
        max_fevals=max_fevals,
        tol=tol,
        record_every=record_every,
    )


def operands(cfg, problem, alg):
    """(F, J, x*) that the algorithm actually runs on."""
    if alg["family"] in NE_FAMILIES:
        if cfg.reduction is not None:
            return tseng_hat(problem.F, problem.J, cfg.reduction["lambda"]), None, None
        return problem.F, None, problem.x_star
    J = problem.J if problem.J is not None else resolvent_zero(problem.F.dim)
    return problem.F, J, problem.x_star


def _budget(cfg, budget):
    if cfg.mode == "fevals":
        return {"max_iters": budget, "max_fevals": budget}
    return {"max_iters": budget, "max_fevals": None}


def _scaled(eta_grid, value, F):
    if eta_grid["scale"] == "absolute":
        return value
    return value / F.lipschitz


# ---- grid search ----

@dataclass(frozen=True)
class GridRow:
    value: float
    eta: float
    final_rel_residual: float
    status: str


@dataclass
class GridResult:
    label: str
    rows: list = field(default_factory=list)

    @property
    def best(self):
        """Smallest final relative residual among non-diverged rows; ties go to the smaller eta."""
        ok = [r for r in self.rows if r.status != "diverged" and math.isfinite(r.final_rel_residual)]
        if not ok:
            return None
        return min(ok, key=lambda r: (r.final_rel_residual, r.value))


def grid_search(cfg, alg, values=None, problem=None):
    """Run every candidate on the first instance with the reduced budget."""
    grid = cfg.eta_grid or {"values": None, "scale": "absolute"}
    values = values if values is not None else grid["values"]
    if not values:
        raise ConfigError("grid search needs at least one candidate eta")
    problem = problem if problem is not None else build_problem(cfg.problem, cfg.seed_base)
    F, J, _ = operands(cfg, problem, alg)
    result = GridResult(alg["label"])
    for v in values:
        eta = _scaled(grid, v, F)
        sc = solver_config(alg, eta, tol=cfg.tol, record_every=cfg.grid_budget,
                           **_budget(cfg, cfg.grid_budget))
        _, trace = run(sc, F, J, problem.x0)
        result.rows.append(GridRow(v, eta, trace.final.rel_residual, trace.status))
    return result


def write_grid_csv(results, path):
    with open(path, "w", newline="") as fh:
        fh.write("label,value,eta,final_rel_residual,status,best\n")
        for res in results:
            best = res.best
            for r in res.rows:
                mark = "1" if best is r else "0"
                fh.write(f"{res.label},{r.value:.17g},{r.eta:.17g},"
                         f"{r.final_rel_residual:.17g},{r.status},{mark}\n")


# ---- solve ----

def aggregate(traces, with_fevals=False):
    """Mean relative residual per recorded k across instances.

    Rows follow the union of recorded k; a trace that stopped earlier
    contributes its last record. Sums run in instance order.
    """
    ks = sorted({r.k for t in traces for r in t.records})
    idx = [0] * len(traces)
    rows = []
    for k in ks:
        rels, fev = [], []
        for i, t in enumerate(traces):
            recs = t.records
            while idx[i] + 1 < len(recs) and recs[idx[i] + 1].k <= k:
                idx[i] += 1
            rels.append(recs[idx[i]].rel_residual)
            fev.append(recs[idx[i]].fevals)
        n = len(traces)
        row = (k, sum(rels) / n)
        if with_fevals:
            row += (sum(fev) / n,)
        rows.append(row)
    return rows


def write_aggregate_csv(rows, path, with_fevals=False):
    with open(path, "w", newline="") as fh:
        fh.write("k,mean_rel_residual" + (",mean_fevals" if with_fevals else "") + "\n")
        for row in rows:
            cells = [str(row[0]), f"{row[1]:.17g}"]
            if with_fevals:
                cells.append(f"{row[2]:.17g}")
            fh.write(",".join(cells) + "\n")


@dataclass
class RunSummary:
    label: str
    seed: int
    eta: float
    status: str
    iterations: int
    fevals: int
    final_rel_residual: float


@dataclass
class SolveReport:
    summaries: list = field(default_factory=list)
    grids: list = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    traces: dict = field(default_factory=dict)

    @property
    def all_diverged(self):
        return bool(self.summaries) and all(s.status == "diverged" for s in self.summaries)

    def mean_final(self, label):
        vals = [s.final_rel_residual for s in self.summaries if s.label == label]
        return sum(vals) / len(vals)


def solve(cfg, out_dir=None, write=True):
    """Run every (algorithm, instance) pair, writing traces and aggregates under ``out_dir``."""
    out = Path(out_dir if out_dir is not None else cfg.output)
    problems = [build_problem(cfg.problem, cfg.seed_base + i) for i in range(cfg.instances)]
    report = SolveReport()
    if write:
        out.mkdir(parents=True, exist_ok=True)
    with_fevals = cfg.mode == "fevals"
    for alg in cfg.algorithms:
        label = alg["label"]
        grid_value = None
        if alg["eta"] == "grid":
            res = grid_search(cfg, alg, problem=problems[0])
            report.grids.append(res)
            if res.best is None:
                for i in range(cfg.instances):
                    report.summaries.append(RunSummary(label, cfg.seed_base + i, math.nan,
                                                       "diverged", 0, 0, math.inf))
                continue
            grid_value = res.best.value
        traces = []
        for i, problem in enumerate(problems):
            seed = cfg.seed_base + i
            F, J, x_star = operands(cfg, problem, alg)
            eta = _scaled(cfg.eta_grid, grid_value, F) if grid_value is not None else None
            sc = solver_config(alg, eta, tol=cfg.tol, record_every=cfg.record_every,
                               **_budget(cfg, cfg.budget))
            state, trace = run(sc, F, J, problem.x0, x_star)
            trace.meta.update({"seed": seed, "label": label})
            traces.append(trace)
            report.summaries.append(RunSummary(label, seed, trace.eta, trace.status, state.k,
                                               trace.final.fevals, trace.final.rel_residual))
            if write:
                (out / label).mkdir(exist_ok=True)
                write_trace_csv(trace, out / label / f"seed_{seed}.csv")
        rows = aggregate(traces, with_fevals)
        report.aggregates[label] = rows
        report.traces[label] = traces
        if write:
            write_aggregate_csv(rows, out / f"{label}_aggregate.csv", with_fevals)
    if write:
        if report.grids:
            write_grid_csv(report.grids, out / "grid.csv")
        (out / "summary.json").write_text(json.dumps(
            {"config": cfg.to_dict(), "runs": [_jsonable(asdict(s)) for s in report.summaries]},
            indent=2))
    return report


def _jsonable(d):
    return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in d.items()}


# ---- certify ----

def certify(cfg, lemma_trials=200):
    """Lemma checks plus every applicable trajectory certificate on each instance."""
    if not cfg.has_solution:
        raise ConfigError("problem: certificates need a known solution "
                          "(kind 'known' or an unconstrained 'quad')")
    for i, alg in enumerate(cfg.algorithms):
        if alg["eta"] == "grid":
            raise ConfigError(f"algorithms[{i}].eta: certificates need 'auto' or a fixed eta")
    # the weak-Minty premise cannot be checked by sampling, so nonmonotone runs only report
    p = cfg.problem
    monotone = p["kind"] == "known" or (p["eigen_mode"] == "clip" and p["d_lower"] >= 0)
    lines, results = [], []
    try:
        rep = check_interval_lemmas(trials=lemma_trials, seed=cfg.seed_base)
    except LemmaViolation as exc:
        lines.append(f"FAIL stepsize interval lemmas: {exc}")
        lemma_ok = False
    else:
        lines.append(f"PASS stepsize interval lemmas: {rep.passed}/{rep.trials} tuples, "
                     f"{rep.rejected} threshold rejections, "
                     f"{rep.intersection_passed} last-iterate overlaps")
        lemma_ok = True
    for i in range(cfg.instances):
        seed = cfg.seed_base + i
        problem = build_problem(cfg.problem, seed)
        configs, etas = [], {}
        for alg in cfg.algorithms:
            sc = solver_config(alg, max_iters=cfg.budget)
            F, _, _ = operands(cfg, problem, alg)
            if alg["eta"] == "auto":
                rule = sc.rule()
                k1, k2 = rule.kappas if rule is not None else (0.0, 0.0)
                beta = sc.beta if sc.family in RULE_FAMILIES else 1.0
                pc = ProblemConstants(F.lipschitz, sc.rho, beta, k1, k2)
                etas[id(sc)] = alg["safety"] * upper_step(sc.family, pc, sc.tau)
            else:
                etas[id(sc)] = alg["eta"]
            configs.append(sc)
        for res in certify_all(problem, configs, lambda c: etas[id(c)], cfg.budget):
            results.append(res)
            tag = "" if monotone else " (diagnostic)"
            lines.append(f"[seed {seed}]{tag} {res.line()}")
    ok = lemma_ok and (not monotone or all(r.passed for r in results))
    return ok, lines


# ---- gen ----

def snapshot(cfg, out_dir, seed=None):
    """Write the problem data of one instance as CSV matrices plus a JSON index."""
    seed = cfg.seed_base if seed is None else seed
    problem = build_problem(cfg.problem, seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}

    def put(name, arr):
        write_matrix_csv(out / f"{name}.csv", arr)
        files[name] = f"{name}.csv"

    F = problem.F
    if hasattr(F, "matrix"):
        put("matrix", F.matrix)
        put("offset", F.offset)
    if hasattr(F, "copies"):
        for j in range(F.copies.shape[0]):
            put(f"features_{j}", F.copies[j])
        put("labels", F.labels)
    put("x0", problem.x0)
    if problem.x_star is not None:
        put("x_star", problem.x_star)
    meta = {"problem": cfg.problem, "seed": seed, "dim": F.dim, "files": files,
            "split": list(problem.meta.get("split", ()))}
    (out / "problem.json").write_text(json.dumps(meta, indent=2))
    return meta


def with_overrides(cfg, output=None, seed_base=None):
    changes = {}
    if output is not None:
        changes["output"] = output
    if seed_base is not None:
        if seed_base < 0:
            raise ConfigError("--seed-base: must be >= 0")
        changes["seed_base"] = seed_base
    return replace(cfg, **changes) if changes else cfg


def candidate_values(text):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--etas: cannot parse {text!r}") from None
    if not vals or any(not (v > 0 and math.isfinite(v)) for v in vals):
        raise ConfigError("--etas: need positive finite values")
    return vals
