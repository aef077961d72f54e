"""Command-line entry point: ``bcf run|plan|validate|spectra``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from .consensus import max_sigma_for_n_loop, plan_n_loop
from .errors import BCFError, ConfigError, Infeasible
from .network import make_balanced_weights, second_largest_singular_value, stationary_distribution


def _scenario(args):
    from .sim import load_scenario

    sc = load_scenario(args.scenario)
    return sc.with_overrides(seed=args.seed, mode=args.mode, pool=args.pool, out=getattr(args, "out", None))


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("scenario", help="scenario file (TOML)")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--mode", choices=("bcf", "hbcf"), help="override the filtering mode")
    p.add_argument("--pool", choices=("linop", "logop"), help="override the opinion pool")


def cmd_run(args) -> int:
    from .sim import run_scenario

    sc = _scenario(args)
    res = run_scenario(sc, out_dir=args.out)
    s = res.summary
    print(f"{sc.name}: {sc.steps} steps, m={sc.m}, mode={sc.mode}, pool={sc.pool.value}")
    print(f"sigma={s['sigma_full']:.6g}  n_loop(last)={s['n_loop_per_step'][-1]}  "
          f"theta<=eps_cons on all steps: {s['theta_bound_all_steps']}")
    print("final estimate (agent 1):", " ".join(f"{v:.6g}" for v in s["final_estimates"][0]),
          " truth:", " ".join(f"{v:.6g}" for v in s["final_truth"]))
    if res.events:
        print(f"{len(res.events)} event(s) logged")
    out = args.out or sc.output.get("dir")
    if out:
        print(f"wrote {out}/metrics.csv and {out}/summary.json")
    elif args.csv:
        sys.stdout.write(res.metrics.to_csv())
    return 0


def cmd_plan(args) -> int:
    try:
        n = plan_n_loop(args.sigma, args.gamma, args.eps_cons, args.eps_comm, args.m)
    except Infeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 1
    print(f"n_loop = {n}")
    print(f"largest sigma meeting eps_cons with {n} loops: "
          f"{max_sigma_for_n_loop(n, args.gamma, args.eps_cons, args.eps_comm, args.m):.6g}")
    return 0


def cmd_validate(args) -> int:
    sc = _scenario(args)
    g = sc.build_graph()
    if sc.m > 1:
        make_balanced_weights(g, sc.topology["weights"])
    print(f"{args.scenario}: ok ({sc.m} agents, {sc.grid.n_cells} cells, {sc.steps} steps)")
    return 0


def cmd_spectra(args) -> int:
    sc = _scenario(args)
    g = sc.build_graph()
    if sc.m == 1:
        print("m = 1: sigma undefined, pi = [1]")
        return 0
    P = make_balanced_weights(g, sc.topology["weights"])
    pi = stationary_distribution(P)
    report = {
        "m": sc.m,
        "weights": sc.topology["weights"],
        "sigma": second_largest_singular_value(P),
        "pi": pi.tolist(),
        "row_stochastic": P.row_stochastic,
        "column_stochastic": P.column_stochastic,
        "strongly_connected": g.is_strongly_connected(),
        "max_row_error": float(np.abs(P.matrix.sum(axis=1) - 1).max()),
        "max_column_error": float(np.abs(P.matrix.sum(axis=0) - 1).max()),
    }
    print(json.dumps(report, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bcf", description="Bayesian consensus filtering on grid densities")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario")
    _common(p)
    p.add_argument("--out", help="output directory for metrics.csv and summary.json")
    p.add_argument("--csv", action="store_true", help="print the metrics CSV when no --out is given")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("plan", help="smallest number of consensus loops meeting eps_cons")
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--eps-cons", type=float, required=True)
    p.add_argument("--eps-comm", type=float, default=0.0)
    p.add_argument("--m", type=int, required=True)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("validate", help="check a scenario file")
    _common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("spectra", help="print sigma, pi and balance checks for the scenario topology")
    _common(p)
    p.set_defaults(func=cmd_spectra)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print("invalid scenario:", file=sys.stderr)
        for path, msg in exc.problems:
            print(f"  {path or '<file>'}: {msg}", file=sys.stderr)
        return 2
    except BCFError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
