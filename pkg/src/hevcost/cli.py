"""Command-line entry point: ``hevcost <command> [--config F] [--out D] [--seed N]``.

Commands:

``demand``   write the motor-power demand of each configured cycle
``dp``       solve the configured strategies by dynamic programming
``policy``   run the configured causal policies (optionally a region map)
``compare``  every configured strategy and solver, plus a summary table
``sweep``    sensitivity sweep of the DP benchmark and the numeric policy
``verify``   oracle cross-checks with measured error against tolerance

On failure the last line on stderr is ``error: {json}`` with the command,
the exception type and the message, and the exit status is nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hevcost", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, text in (("demand", "write demand traces"), ("dp", "dynamic-programming benchmark"),
                       ("policy", "causal policies"), ("compare", "compare all strategies"),
                       ("sweep", "sensitivity sweep"), ("verify", "oracle self-checks")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="experiment config file (key = value)")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--seed", type=int, help="random seed (overrides the config)")
        p.add_argument("--force", action="store_true",
                       help="overwrite outputs written under a different config")
        if name == "dp":
            p.add_argument("--export-grid", type=int, metavar="EVERY", default=0,
                           help="also write cost-to-go and policy grids, every N-th step")
        if name == "policy":
            p.add_argument("--region-map", action="store_true",
                           help="also write the constrained region map of the explicit law")
    return ap


def _overrides(args) -> dict[str, str]:
    kv = {}
    if args.out:
        kv["out"] = args.out
    if args.seed is not None:
        kv["seed"] = str(args.seed)
    return kv


def _cmd_dp(cfg, args) -> None:
    from . import harness
    report = harness.run_comparison(cfg, force=args.force, only={"dp"})
    print(report.table())
    if args.export_grid:
        for ref in cfg.cycles:
            demand = harness._demand(ref, cfg.params)
            tag = harness._cycle_tag(ref)
            for s in cfg.strategies:
                if "dp" not in cfg.solvers_for(s) or cfg.two_state:
                    continue
                sol, _ = harness.solve_dp(cfg, s, demand)
                stem = f"{tag}_{s.value.lower()}"
                sol.cost_to_go_csv(cfg.out / f"cost_to_go_{stem}.csv", every=args.export_grid)
                sol.policy_csv(cfg.out / f"policy_{stem}.csv", every=args.export_grid)


def _cmd_policy(cfg, args) -> None:
    from . import harness
    report = harness.run_comparison(cfg, force=args.force, only=set(harness.CAUSAL_SOLVERS))
    print(report.table())
    if args.region_map:
        from .pmp import region_map, write_region_map
        rows = region_map(np.linspace(-50e3, 75e3, 251), np.linspace(-15.0, 15.0, 241),
                          cfg.params.costs, cfg.params)
        write_region_map(cfg.out / "region_map.csv", rows)


def _cmd_sweep(cfg, args) -> None:
    from . import harness

    def progress(done, total):
        print(f"sweep point {done}/{total}", file=sys.stderr, flush=True)

    rep = harness.run_sensitivity(cfg, force=args.force, progress=progress)
    for f in rep.files:
        print(f)
    print(f"{len(rep.points)} points in {rep.elapsed_s:.1f} s")


def _cmd_verify(cfg, args) -> int:
    from . import harness
    rep = harness.run_verify(cfg, force=args.force)
    for line in rep.lines():
        print(line)
    if not rep.passed:
        names = ", ".join(c.name for c in rep.failures())
        _error("verify", "CheckFailed", f"{len(rep.failures())} check(s) failed: {names}")
        return 1
    return 0


def _error(command: str, kind: str, message: str) -> None:
    print("error: " + json.dumps({"command": command, "type": kind, "message": message}),
          file=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        from . import harness
        cfg = harness.load_config(args.config, _overrides(args))
        if args.command == "demand":
            for p in harness.write_demands(cfg, force=args.force):
                print(p)
        elif args.command == "dp":
            _cmd_dp(cfg, args)
        elif args.command == "policy":
            _cmd_policy(cfg, args)
        elif args.command == "compare":
            print(harness.run_comparison(cfg, force=args.force).table())
        elif args.command == "sweep":
            _cmd_sweep(cfg, args)
        else:
            return _cmd_verify(cfg, args)
    except Exception as exc:  # every failure becomes one parsable line
        _error(args.command, type(exc).__name__, str(exc))
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
