"""egsolve command line: solve, grid, certify and gen.

Exit codes: 0 success, 2 config error, 3 certificate failure, 4 all runs
(or all grid candidates of some algorithm) diverged.
"""

import argparse
import sys
from pathlib import Path

from .bench import (
    ConfigError,
    candidate_values,
    certify,
    grid_search,
    load_config,
    load_preset,
    preset_names,
    snapshot,
    solve,
    with_overrides,
    write_grid_csv,
)

EXIT_OK, EXIT_CONFIG, EXIT_CERTIFICATE, EXIT_DIVERGED = 0, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="egsolve", description="Extragradient-type solvers and benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", help="JSON experiment config")
        src.add_argument("--preset", help=f"bundled config: {', '.join(preset_names())}")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--seed-base", type=int, help="seed of the first instance")

    p = sub.add_parser("solve", help="run every algorithm on every instance")
    common(p)
    p = sub.add_parser("grid", help="grid-search the stepsize of each algorithm")
    common(p)
    p.add_argument("--etas", help="comma-separated candidates (overrides eta_grid.values)")
    p = sub.add_parser("certify", help="check the convergence inequalities along trajectories")
    common(p)
    p = sub.add_parser("gen", help="write a problem snapshot as CSV")
    common(p)
    return parser


def _load(args):
    cfg = load_preset(args.preset) if args.preset else load_config(args.config)
    return with_overrides(cfg, args.out, args.seed_base)


def cmd_solve(cfg):
    report = solve(cfg)
    for s in report.summaries:
        print(f"{s.label} seed={s.seed} eta={s.eta:.6g} status={s.status} "
              f"k={s.iterations} fevals={s.fevals} rel_residual={s.final_rel_residual:.3e}")
    labels = list(dict.fromkeys(s.label for s in report.summaries))
    for label in labels:
        print(f"mean {label}: {report.mean_final(label):.3e}")
    print(f"wrote {Path(cfg.output)}")
    return EXIT_DIVERGED if report.all_diverged else EXIT_OK


def cmd_grid(cfg, etas=None):
    values = candidate_values(etas) if etas else None
    if values is None and cfg.eta_grid is None:
        raise ConfigError("grid: config has no eta_grid; pass --etas")
    results = [grid_search(cfg, alg, values) for alg in cfg.algorithms]
    for res in results:
        best = res.best
        for r in res.rows:
            mark = " *" if best is r else ""
            print(f"{res.label} eta={r.eta:.6g} rel_residual={r.final_rel_residual:.3e} "
                  f"status={r.status}{mark}")
        if best is None:
            print(f"{res.label}: all candidates diverged")
        else:
            print(f"best {res.label}: eta={best.eta:.6g} rel_residual={best.final_rel_residual:.3e}")
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    write_grid_csv(results, out / "grid.csv")
    return EXIT_DIVERGED if any(r.best is None for r in results) else EXIT_OK


def cmd_certify(cfg):
    ok, lines = certify(cfg)
    print("\n".join(lines))
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "certificates.txt").write_text("\n".join(lines) + "\n")
    return EXIT_OK if ok else EXIT_CERTIFICATE


def cmd_gen(cfg):
    meta = snapshot(cfg, cfg.output)
    print(f"wrote {len(meta['files'])} arrays to {cfg.output}")
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
        if args.command == "solve":
            return cmd_solve(cfg)
        if args.command == "grid":
            return cmd_grid(cfg, args.etas)
        if args.command == "certify":
            return cmd_certify(cfg)
        return cmd_gen(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
