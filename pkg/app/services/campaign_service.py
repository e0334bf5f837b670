"""Campaign orchestration behind the CLI: discrete reports, pilot timings, adaptive and fixed-N runs."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from app.config import settings
from app.models import LogisticPosterior, LogModel, build_gaussian_t_model, build_logistic_model, build_mixture_model
from app.schemas import ContinuousModelSpec, DiscreteModelConfig, ExperimentConfig, ModelConfigError, PilotRow
from app.services import output_writer, violation_logger
from app.services.adapt_service import AdaptConfig, AffineCost, AdaptiveRun, fit_cost, run_adaptive
from app.services.analysis_service import AnalysisReport, LambdaGrid, analysis_report, compare_with_reference
from app.services.diagnostics import NON_ERGODIC, GridRun, IreRow, ire_table
from app.services.discrete_model import DiscreteModel, discrete_log_model, load_model_config, model_from_config
from app.services.isir_kernel import run_chain
from app.services.laplace_service import fit_laplace
from app.services.rng import RandomStreams
from app.services.transition_service import transition_stack
from app.services.wdbc_loader import load_wdbc

logger = logging.getLogger(__name__)

CONTINUOUS_MODELS = ("mixture", "logistic", "normal-t")
PILOT_N = [2**i + 1 for i in range(2, 14)]
DRY_RUN_A, DRY_RUN_B = 2.0, 0.5
CHECKPOINTS = 10


# --- модели ------------------------------------------------------------------


def resolve_discrete(model: str | DiscreteModelConfig) -> tuple[DiscreteModel, DiscreteModelConfig]:
    cfg = model if isinstance(model, DiscreteModelConfig) else load_model_config(model)
    return model_from_config(cfg), cfg


def build_continuous(spec: ContinuousModelSpec) -> LogModel:
    if spec.name == "mixture":
        return build_mixture_model(spec.dim, spec.dof)
    if spec.name == "normal-t":
        return build_gaussian_t_model(spec.dof)
    data = load_wdbc(spec.data_path)
    posterior = LogisticPosterior(data.design, data.labels)
    laplace = fit_laplace(posterior)
    return build_logistic_model(posterior, laplace, spec.prior_weight)


def build_log_model(model: str | DiscreteModelConfig | ContinuousModelSpec) -> LogModel:
    """Sampler-side model from an experiment's model field."""
    if isinstance(model, ContinuousModelSpec):
        return build_continuous(model)
    if isinstance(model, str) and model in CONTINUOUS_MODELS:
        return build_continuous(ContinuousModelSpec(name=model))
    discrete, _ = resolve_discrete(model)
    return discrete_log_model(discrete)


def _output_dir(cfg: ExperimentConfig) -> Path:
    out = settings.get_output_dir(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- discrete ----------------------------------------------------------------


@dataclass
class DiscreteOutputs:
    report: AnalysisReport
    mismatches: list[str]
    paths: dict[str, Path] = field(default_factory=dict)


def cmd_discrete(cfg: ExperimentConfig) -> DiscreteOutputs:
    if isinstance(cfg.model, ContinuousModelSpec) or cfg.model in CONTINUOUS_MODELS:
        raise ModelConfigError(f"discrete analysis needs a finite-state model, got {cfg.model!r}")
    model, model_cfg = resolve_discrete(cfg.model)
    grid = LambdaGrid.from_config(cfg.grid or model_cfg.grid)
    method = "mc" if cfg.mc else (cfg.method or model_cfg.method)
    samples = cfg.mc_samples or model_cfg.mc_samples or settings.mc_samples
    started = time.perf_counter()
    stack = transition_stack(model, grid.n_max, method, samples=samples, seed=cfg.seed, workers=cfg.workers)
    report = analysis_report(stack, cfg.cost_a or model_cfg.cost_a, grid)
    mismatches = compare_with_reference(report, model_cfg.reference_table)
    logger.info("%s: analysis done in %.1fs (%s, w_hat=%.4g)", model.name, time.perf_counter() - started, method, model.w_hat)

    out = _output_dir(cfg)
    names = report.function_names()
    paths = {
        "table": output_writer.write_csv(
            out / f"{model.name}_table.csv",
            list(report.table.columns()),
            output_writer.table_csv_rows(report.table.columns()),
        ),
        "minimisers": output_writer.write_csv(
            out / f"{model.name}_minimisers.csv",
            output_writer.minimiser_header(names),
            (row.as_csv(names) for row in report.rows),
        ),
    }
    log_path = violation_logger.start_log(violation_logger.violation_log_path(out, model.name))
    for i, v in enumerate(report.violations):
        header = f"model={model.name} method={method}" if i == 0 else None
        violation_logger.append_violation(log_path, v.check, v.where, v.value, v.bound, header=header)
    paths["violations"] = log_path

    summary = out / f"{model.name}_report.txt"
    violation_logger.start_log(summary)
    violation_logger.append_note(summary, f"model: {model.name} (n={model.n}, w_hat={model.w_hat:.6g}, method={method})")
    if model_cfg.provenance:
        violation_logger.append_note(summary, f"provenance: {model_cfg.provenance}")
    for note in report.notes:
        violation_logger.append_note(summary, note)
    violation_logger.append_note(summary, f"bound violations: {len(report.violations)}")
    if model_cfg.reference_table:
        violation_logger.append_note(summary, f"reference mismatches: {len(mismatches)}")
        for m in mismatches:
            violation_logger.append_note(summary, f"  {m}")
    paths["report"] = summary
    return DiscreteOutputs(report, mismatches, paths)


# --- pilot -------------------------------------------------------------------


def _time_fixed_n(model: LogModel, n: int, iters: int, streams: RandomStreams, workers: int | None) -> float:
    trace = run_chain(model, None, float(n), iters, streams, workers=workers)
    return trace.seconds_per_iter


def cmd_pilot(cfg: ExperimentConfig) -> tuple[AffineCost, list[PilotRow]]:
    """Fixed-N timing runs (sequential, so timings do not compete), OLS fit, cost file."""
    n_list = cfg.n_list or PILOT_N
    if len(set(n_list)) < 2:
        raise ModelConfigError("≥2 distinct N required for the pilot cost fit")
    if cfg.dry_run:
        timings = [(n, DRY_RUN_A + DRY_RUN_B * n) for n in n_list]
        logger.info("pilot dry run: synthetic timings T = %g + %g N", DRY_RUN_A, DRY_RUN_B)
    else:
        model = build_log_model(cfg.model)
        iters = cfg.iters or settings.pilot_iters
        root = RandomStreams(cfg.seed)
        timings = []
        for i, n in enumerate(n_list):
            spi = _time_fixed_n(model, n, iters, root.child(i), cfg.workers)
            logger.info("pilot N=%d: %.3e s/iter", n, spi)
            timings.append((n, spi))
    cost = fit_cost(timings)
    rows = [PilotRow(N=n, mean_seconds=t, fitted_a=cost.a, fitted_b=cost.b) for n, t in timings]
    out = _output_dir(cfg)
    output_writer.write_csv(out / "pilot.csv", output_writer.PILOT_HEADER, (r.model_dump() for r in rows))
    output_writer.write_cost_file(out / "cost.json", cost)
    logger.info("pilot fit: c(lambda) = %.4g + lambda", cost.a)
    return cost, rows


# --- adaptive ----------------------------------------------------------------


def resolve_cost(cfg: ExperimentConfig) -> AffineCost:
    if cfg.cost is not None:
        return AffineCost(cfg.cost.a, cfg.cost.b)
    if cfg.cost_file is not None:
        return output_writer.read_cost_file(Path(cfg.cost_file))
    default = settings.get_output_dir(cfg.output_dir) / "cost.json"
    if default.is_file():
        return output_writer.read_cost_file(default)
    raise ModelConfigError("adaptive run needs a cost: --cost-a/--cost-b, --cost-file, or a pilot cost.json in the output directory")


@dataclass
class AdaptiveOutputs:
    run: AdaptiveRun
    summary: dict
    paths: dict[str, Path] = field(default_factory=dict)


def checkpoint_windows(run: AdaptiveRun, windows: int = CHECKPOINTS) -> list[dict]:
    """Mean lambda and mean eps_hat per consecutive window of the trace."""
    n = len(run.trace)
    out = []
    for idx in np.array_split(np.arange(n), min(windows, n) or 1):
        if idx.size == 0:
            continue
        out.append({
            "k_from": int(idx[0]) + 1,
            "k_to": int(idx[-1]) + 1,
            "mean_lambda": float(run.trace.lambda_used[idx].mean()),
            "mean_eps_hat": float(run.trace.eps_hat[idx].mean()),
        })
    return out


def cmd_adaptive(cfg: ExperimentConfig) -> AdaptiveOutputs:
    model = build_log_model(cfg.model)
    cost = resolve_cost(cfg)
    n_max = settings.adapt_n_max if cfg.n_max is None else cfg.n_max
    acfg = AdaptConfig.from_settings(
        beta_exponent=cfg.beta, n_max=n_max, n_iters=cfg.iters, burn_in_fraction=cfg.burn_in
    )
    run = run_adaptive(model, cost, acfg, cfg.seed, workers=cfg.workers, keep_states=cfg.keep_states)
    tail = run.post_burn_in(acfg.burn_in_fraction)
    summary = {
        "model": model.name,
        "seed": cfg.seed,
        "cost": {"a": cost.a, "b": cost.b},
        "n_iters": acfg.n_iters,
        "burn_in": acfg.burn_in,
        "n_max": None if math.isinf(acfg.n_max) else acfg.n_max,
        "beta_exponent": acfg.beta_exponent,
        "final_lambda": run.final_lambda,
        "post_burn_in_means": {name: float(v.mean()) for name, v in tail.f_values.items()} if len(tail) else {},
        "mean_eps_hat": float(tail.eps_hat.mean()) if len(tail) else None,
        "seconds_per_iter": run.trace.seconds_per_iter,
        "windows": checkpoint_windows(run),
    }
    out = _output_dir(cfg)
    paths = {
        "trace": output_writer.write_jsonl(out / f"{model.name}_adaptive_trace.jsonl", run.trace.rows(cfg.keep_states)),
        "lambda_trace": output_writer.write_csv(
            out / f"{model.name}_lambda_trace.csv",
            output_writer.LAMBDA_TRACE_HEADER,
            ({"k": k + 1, "xi": float(run.trace.xi[k]), "lambda": float(lam)} for k, lam in enumerate(run.lambda_trace)),
        ),
        "summary": output_writer.write_json(out / f"{model.name}_adaptive_summary.json", summary),
    }
    logger.info("adaptive %s: terminal lambda %.3f after %d iterations", model.name, run.final_lambda, acfg.n_iters)
    return AdaptiveOutputs(run, summary, paths)


# --- grid --------------------------------------------------------------------


def _grid_run(model: LogModel, n: int, iters: int, burn_in: float, streams: RandomStreams) -> GridRun:
    trace = run_chain(model, None, float(n), iters, streams, workers=1)
    return GridRun(float(n), trace.tail(int(burn_in * iters)), n)


@dataclass
class GridOutputs:
    rows: list[IreRow]
    flags: list[str]
    paths: dict[str, Path] = field(default_factory=dict)


def cmd_grid(cfg: ExperimentConfig) -> GridOutputs:
    if not cfg.n_list:
        raise ModelConfigError("grid run needs a non-empty N list")
    model = build_log_model(cfg.model)
    iters = cfg.iters or settings.pilot_iters
    burn_in = settings.burn_in_fraction if cfg.burn_in is None else cfg.burn_in
    root = RandomStreams(cfg.seed)
    flags = []
    jobs = []
    for i, n in enumerate(cfg.n_list):
        if n == 1:
            flags.append(f"N=1: {NON_ERGODIC}")
            logger.warning("N=1: %s, row omitted", NON_ERGODIC)
            continue
        jobs.append((n, root.child(i)))
    n_jobs = min(settings.effective_workers(cfg.workers), max(len(jobs), 1))
    runs = Parallel(n_jobs=n_jobs)(delayed(_grid_run)(model, n, iters, burn_in, s) for n, s in jobs)
    names = list(model.test_functions)
    rows = ire_table(runs, names)
    out = _output_dir(cfg)
    path = output_writer.write_csv(
        out / f"{model.name}_grid_ire.csv", output_writer.IRE_HEADER, (r.csv_row(names) for r in rows)
    )
    return GridOutputs(rows, flags, {"ire": path})


# --- WDBC ----------------------------------------------------------------------


def cmd_ingest_wdbc(data_path: str | None, output_dir: str | None = None) -> dict[str, Path]:
    data = load_wdbc(data_path)
    out = settings.get_output_dir(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    design_path = out / "wdbc_design.csv"
    header = ["label", "intercept"] + [f"x{i}" for i in range(1, data.design.shape[1])]
    rows = (dict(zip(header, np.concatenate([[y], x]))) for y, x in zip(data.labels, data.design))
    output_writer.write_csv(design_path, header, rows)
    meta_path = output_writer.write_json(out / "wdbc_metadata.json", data.metadata())
    return {"design": design_path, "metadata": meta_path}


def run_experiment(cfg: ExperimentConfig):
    handlers = {
        "discrete-analysis": cmd_discrete,
        "pilot-cost": cmd_pilot,
        "adaptive-run": cmd_adaptive,
        "fixed-grid-run": cmd_grid,
    }
    return handlers[cfg.kind](cfg)
