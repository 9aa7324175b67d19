"""Command-line entry point.

Examples::

    jointmarket --scenario ref --mode both
    jointmarket --scenario ref --cases
    jointmarket --scenario my_case.toml --audit 100000 --seed 7 --out results/

Exit status: 0 when every requested run converged and all outputs were
written, 1 when a run did not converge, 2 on a configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

from . import coordinator, reports, validation
from .conic import SolveError
from .scenario import AlgoConfig, ScenarioError, load_scenario

OUT_ENV = "JOINTMARKET_OUT"
DEFAULT_OUT = "results"

TOLERANCE_KEYS = [f.name for f in dataclasses.fields(AlgoConfig) if f.name.startswith("tol_")] + ["delta_g", "delta_u"]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jointmarket", description="Clear a joint energy, reserve and carbon market.")
    p.add_argument("--scenario", required=True, help="scenario TOML file, or 'ref' for the bundled case")
    p.add_argument("--mode", choices=["decentralized", "centralized", "both"], default="decentralized")
    p.add_argument("--sweep", action="store_true", help="run the manager price sweep")
    p.add_argument("--cases", action="store_true", help="run the three market-design cases")
    p.add_argument("--audit", type=int, metavar="N", help="Monte Carlo audit with N samples")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or '{DEFAULT_OUT}')")
    p.add_argument("--max-iter", type=int, help="inner iteration cap per round")
    p.add_argument("--max-rounds", type=int, help="bound contraction round cap")
    p.add_argument("--no-warm-start", action="store_true")
    p.add_argument("--fixed-penalty", action="store_true")
    p.add_argument("--tol", action="append", default=[], metavar="KEY=VALUE",
                   help=f"tolerance override, KEY in {', '.join(TOLERANCE_KEYS)}")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _overrides(args) -> dict:
    out = {}
    if args.max_iter is not None:
        out["max_admm_iters"] = args.max_iter
    if args.max_rounds is not None:
        out["max_rounds"] = args.max_rounds
    if args.no_warm_start:
        out["warm_start"] = False
    if args.fixed_penalty:
        out["adaptive_penalty"] = False
    for item in args.tol:
        key, sep, value = item.partition("=")
        if not sep or key not in TOLERANCE_KEYS:
            raise ScenarioError(f"--tol {item}", f"expected KEY=VALUE with KEY in {TOLERANCE_KEYS}")
        try:
            out[key] = float(value)
        except ValueError:
            raise ScenarioError(f"--tol {item}", "value is not a number") from None
        if not out[key] > 0:
            raise ScenarioError(f"--tol {item}", "must be positive")
    return out


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_scenario(args.scenario)
        overrides = _overrides(args)
        if args.max_iter is not None and args.max_iter < 1:
            raise ScenarioError("--max-iter", "must be a positive integer")
        if args.audit is not None and args.audit < 1:
            raise ScenarioError("--audit", "must be a positive integer")
        cfg = cfg.replace(algo=dataclasses.replace(cfg.algo, **overrides))
    except ScenarioError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    out_dir = Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    requested = []
    converged = True
    try:
        outcomes = {}
        if args.mode in ("centralized", "both"):
            outcomes["centralized"] = validation.solve_centralized(cfg)
        if args.mode in ("decentralized", "both"):
            outcomes["decentralized"] = coordinator.run(cfg)
        main_outcome = outcomes.get("decentralized") or outcomes["centralized"]
        for name, o in outcomes.items():
            converged &= o.converged
            print(f"{name}: welfare {o.welfare:.6f} $, converged {o.converged}, rounds {len(o.rounds)}, "
                  f"inner iterations {o.iterations}")
        if len(outcomes) == 2:
            gap = validation.welfare_gap(outcomes["decentralized"], outcomes["centralized"])
            print(f"welfare gap (relative): {gap:.3e}")

        reports.write_csv(out_dir / "outcome.csv", reports.outcome_rows(main_outcome), reports.OUTCOME_COLUMNS)
        reports.write_csv(out_dir / "carbon_ledger.csv", reports.ledger_rows(main_outcome), reports.LEDGER_COLUMNS)
        reports.write_csv(out_dir / "residuals.csv", reports.residual_rows(main_outcome), reports.RESIDUAL_COLUMNS)
        requested += ["outcome.csv", "carbon_ledger.csv", "residuals.csv"]
        if "centralized" in outcomes and "decentralized" in outcomes:
            reports.write_csv(out_dir / "outcome_centralized.csv", reports.outcome_rows(outcomes["centralized"]),
                              reports.OUTCOME_COLUMNS)
            requested.append("outcome_centralized.csv")

        if args.audit is not None:
            audit = validation.monte_carlo_audit(main_outcome, args.audit, args.seed)
            reports.write_csv(out_dir / "audit.csv", audit.rows(cfg),
                              ["constraint", "participant", "hour", "frequency", "epsilon"])
            requested.append("audit.csv")
            print(f"audit: largest violation frequency {audit.max_frequency:.4f} over {args.audit} samples")

        sub_mode = "decentralized" if args.mode == "decentralized" else "centralized"
        if args.cases:
            cases = validation.run_cases(cfg, mode=sub_mode)
            reports.write_csv(out_dir / "cases.csv", reports.case_rows(cases), reports.CASE_COLUMNS)
            requested.append("cases.csv")
            print(f"{'Case':<8}{'Social Welfare [$]':>22}{'Total Allowances Held Inside [kg]':>36}")
            for c in cases:
                print(f"{c['case']:<8}{c['welfare']:>22.4f}{c['allowances_held_inside']:>36.1f}")
                converged &= c["converged"]
        if args.sweep:
            rows = validation.run_sweep(cfg, mode=sub_mode)
            reports.write_csv(out_dir / "sweep.csv", rows,
                              ["r_e", "r_c", "status", "welfare", "allowances_to_manager", "pv_to_manager"])
            requested.append("sweep.csv")
            converged &= all(r["status"] == "converged" for r in rows)
    except SolveError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 1

    manifest = reports.RunManifest(scenario=str(args.scenario), mode=args.mode, seed=args.seed,
                                   overrides=overrides, config_hash=reports.config_hash(cfg),
                                   output_dir=str(out_dir), requested=requested)
    manifest.write(out_dir / "manifest.json")
    if not converged:
        print("did not converge within the iteration limits", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
