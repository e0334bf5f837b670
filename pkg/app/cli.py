"""Bench CLI: python -m app <discrete|pilot|adaptive|grid|ingest-wdbc> ..."""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from app.config import configure_logging, settings
from app.models import DominationError
from app.schemas import ModelConfigError, parse_experiment
from app.services import campaign_service
from app.services.adapt_service import CostFitError
from app.services.isir_kernel import InitialisationError, ZeroWeightBatchError
from app.services.laplace_service import LaplaceFitError
from app.services.spectral_service import ReversibilityError, SpectralError
from app.services.transition_service import EnumerationBudgetError

logger = logging.getLogger("app.cli")

DOMAIN_ERRORS = (
    ModelConfigError,
    CostFitError,
    EnumerationBudgetError,
    DominationError,
    InitialisationError,
    ZeroWeightBatchError,
    LaplaceFitError,
    ReversibilityError,
    SpectralError,
    FileNotFoundError,
    json.JSONDecodeError,
)

KINDS = {
    "discrete": "discrete-analysis",
    "pilot": "pilot-cost",
    "adaptive": "adaptive-run",
    "grid": "fixed-grid-run",
}


def _n_max(value: str) -> float:
    v = float(value)
    if math.isfinite(v) and v != int(v):
        raise argparse.ArgumentTypeError(f"N_max must be an integer or inf, got {value}")
    return v


def _common(p: argparse.ArgumentParser, seeded: bool = True) -> None:
    if seeded:
        p.add_argument("--seed", type=int, default=None, help="root seed (required unless given in --config)")
        p.add_argument("--config", type=Path, default=None, help="experiment config JSON; flags override it")
        p.add_argument("--workers", type=int, default=None, help="0 = machine parallelism")
    p.add_argument("--out", default=None, help=f"output directory (default {settings.output_dir})")
    p.add_argument("--log-level", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="python -m app", description="i-SIR bench and finite-state analysis lab")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("discrete", help="exact/MC finite-state analysis report")
    p.add_argument("model", nargs="?", help="model config name or path (configs/<name>.json)")
    p.add_argument("--cost-a", type=float, nargs="+", default=None)
    p.add_argument("--grid-lo", type=float, default=None)
    p.add_argument("--grid-hi", type=float, default=None)
    p.add_argument("--grid-step", type=float, default=None)
    p.add_argument("--method", choices=["integral", "enumerate", "mc"], default=None)
    p.add_argument("--mc", action="store_true", help="coupled Monte-Carlo transition estimates")
    p.add_argument("--mc-samples", type=int, default=None)
    _common(p)

    p = sub.add_parser("pilot", help="fixed-N timing runs and affine cost fit")
    p.add_argument("model", nargs="?")
    p.add_argument("--n-list", type=int, nargs="+", default=None)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--dry-run", action="store_true", help="synthetic timings T = 2 + 0.5 N")
    _common(p)

    p = sub.add_parser("adaptive", help="adaptive i-SIR run")
    p.add_argument("model", nargs="?")
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--burn-in", type=float, default=None)
    p.add_argument("--nmax", type=_n_max, default=None)
    p.add_argument("--beta", type=float, default=None, help="step-size exponent")
    p.add_argument("--cost-a", type=float, default=None)
    p.add_argument("--cost-b", type=float, default=1.0)
    p.add_argument("--cost-file", default=None)
    p.add_argument("--keep-states", action="store_true")
    _common(p)

    p = sub.add_parser("grid", help="fixed-N runs with IACT/IRE table")
    p.add_argument("model", nargs="?")
    p.add_argument("--n-list", type=int, nargs="+", default=None)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--burn-in", type=float, default=None)
    _common(p)

    p = sub.add_parser("ingest-wdbc", help="validate and standardise the WDBC CSV")
    p.add_argument("--data", default=None, help="path to wdbc.data (default: $ISIR_DATA_DIR/wdbc.data)")
    _common(p, seeded=False)
    return parser


def experiment_from_args(args: argparse.Namespace) -> dict:
    data: dict = {}
    if args.config is not None:
        if not args.config.is_file():
            raise FileNotFoundError(f"experiment config not found: {args.config}")
        data = json.loads(args.config.read_text(encoding="utf-8"))
    data["kind"] = KINDS[args.command]
    if args.model is not None:
        data["model"] = args.model
    overrides = {
        "seed": args.seed,
        "workers": args.workers,
        "output_dir": args.out,
    }
    if args.command == "discrete":
        overrides.update(cost_a=args.cost_a, method=args.method, mc_samples=args.mc_samples)
        if args.mc:
            overrides["mc"] = True
        grid = dict(data.get("grid") or {})
        for key, value in (("lo", args.grid_lo), ("hi", args.grid_hi), ("step", args.grid_step)):
            if value is not None:
                grid[key] = value
        if grid:
            data["grid"] = grid
    elif args.command == "pilot":
        overrides.update(n_list=args.n_list, iters=args.iters)
        if args.dry_run:
            overrides["dry_run"] = True
    elif args.command == "adaptive":
        overrides.update(iters=args.iters, burn_in=args.burn_in, n_max=args.nmax, beta=args.beta, cost_file=args.cost_file)
        if args.cost_a is not None:
            overrides["cost"] = {"a": args.cost_a, "b": args.cost_b}
        if args.keep_states:
            overrides["keep_states"] = True
    elif args.command == "grid":
        overrides.update(n_list=args.n_list, iters=args.iters, burn_in=args.burn_in)
    data.update({k: v for k, v in overrides.items() if v is not None})
    if "seed" not in data:
        raise ModelConfigError("--seed is required (seeds are never taken from the clock)")
    if "model" not in data:
        raise ModelConfigError("a model is required (positional argument or \"model\" in --config)")
    return data


def _report(result) -> int:
    if isinstance(result, campaign_service.DiscreteOutputs):
        for row in result.report.rows:
            mins = " ".join(f"{k}={v:g} (SO {row.so_G[k]:.2f})" for k, v in row.minimisers.items())
            print(f"a={row.a:g}: lambda_G={row.lambda_G:g} lambda_H={row.lambda_H:g} {mins}")
        for note in result.report.notes:
            print(note)
        if result.mismatches:
            print(f"{len(result.mismatches)} mismatch(es) against the reference table, see {result.paths['report']}")
        for name, path in result.paths.items():
            print(f"{name}: {path}")
        return 1 if result.report.violations else 0
    if isinstance(result, tuple):
        cost, _ = result
        print(f"c(lambda) = {cost.a:.6g} + {cost.b:g} lambda")
        return 0
    if isinstance(result, campaign_service.AdaptiveOutputs):
        print(f"terminal lambda: {result.run.final_lambda:.4f}")
    if isinstance(result, campaign_service.GridOutputs):
        for flag in result.flags:
            print(flag)
    for name, path in result.paths.items():
        print(f"{name}: {path}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        if args.command == "ingest-wdbc":
            paths = campaign_service.cmd_ingest_wdbc(args.data, args.out)
            for name, path in paths.items():
                print(f"{name}: {path}")
            return 0
        cfg = parse_experiment(experiment_from_args(args))
        return _report(campaign_service.run_experiment(cfg))
    except DOMAIN_ERRORS as e:
        logger.error("%s: %s", type(e).__name__, e)
        return 2


if __name__ == "__main__":
    sys.exit(main())
