"""Stochastic-approximation tuning of lambda = 1 + e^xi and the affine cost model.

xi_k = Proj{ xi_{k-1} - k^-beta [c'(lambda)(1 - eps_hat^2) + 2 c(lambda) deps_hat] }
"""
from __future__ import annotations

import logging
import math
import time
from collections.abc import Callable, Sequence
from contextlib import nullcontext
from dataclasses import dataclass, replace
from typing import NamedTuple, Protocol

import numpy as np
from joblib import Parallel
from scipy.stats import linregress

from app.config import settings
from app.models import LogModel
from app.services.isir_kernel import (
    ChainRecorder,
    ChainTrace,
    StepRecord,
    chain_parallel,
    initial_state,
    isir_step_fractional,
)
from app.services.rng import RandomStreams

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA0_UNBOUNDED = 16.0


class CostFitError(ValueError):
    pass


class Cost(Protocol):
    """Any continuously differentiable cost; the convergence theory covers the affine case."""

    def __call__(self, lam: float) -> float: ...

    def derivative(self, lam: float) -> float: ...


@dataclass(frozen=True)
class AffineCost:
    """c(lambda) = a + b lambda."""

    a: float
    b: float = 1.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.a) and self.a >= 0):
            raise ValueError(f"cost overhead a must be >= 0, got {self.a}")
        if not (math.isfinite(self.b) and self.b > 0):
            raise ValueError(f"cost rate b must be > 0, got {self.b}")

    def __call__(self, lam):
        return self.a + self.b * lam

    def derivative(self, lam: float) -> float:
        return self.b

    def scaled(self) -> AffineCost:
        return AffineCost(self.a / self.b, 1.0)


@dataclass(frozen=True)
class AdaptConfig:
    beta_exponent: float = 0.75
    n_max: float = 2**13 + 1  # math.inf = без верхней проекции
    xi0: float | None = None
    n_iters: int = 10_000
    burn_in_fraction: float = 0.10

    def __post_init__(self) -> None:
        if not self.beta_exponent > 0:
            raise ValueError(f"step exponent must be > 0, got {self.beta_exponent}")
        if not (0.5 < self.beta_exponent < 1):
            logger.warning("step exponent %.3g outside (1/2, 1)", self.beta_exponent)
        if math.isfinite(self.n_max) and (self.n_max < 2 or int(self.n_max) != self.n_max):
            raise ValueError(f"N_max must be an integer >= 2 or infinite, got {self.n_max}")
        if self.n_iters < 0:
            raise ValueError(f"n_iters must be non-negative, got {self.n_iters}")
        if not 0 <= self.burn_in_fraction < 1:
            raise ValueError(f"burn-in fraction must lie in [0, 1), got {self.burn_in_fraction}")

    @classmethod
    def from_settings(cls, **overrides) -> AdaptConfig:
        values = {
            "beta_exponent": settings.adapt_beta,
            "n_max": settings.adapt_n_max,
            "n_iters": settings.pilot_iters,
            "burn_in_fraction": settings.burn_in_fraction,
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @property
    def xi_upper(self) -> float:
        return math.log(self.n_max - 1) if math.isfinite(self.n_max) else math.inf

    @property
    def lambda0(self) -> float:
        if self.xi0 is not None:
            return 1.0 + math.exp(self.xi0)
        return self.n_max / 2 if math.isfinite(self.n_max) else DEFAULT_LAMBDA0_UNBOUNDED

    def initial_xi(self) -> float:
        xi = self.xi0 if self.xi0 is not None else math.log(max(self.lambda0 - 1.0, 1.0))
        return project(xi, self.n_max)

    @property
    def burn_in(self) -> int:
        return int(self.burn_in_fraction * self.n_iters)


@dataclass(frozen=True)
class AdaptState:
    xi: float
    k: int = 0
    xi_upper: float = math.inf

    def __post_init__(self) -> None:
        if not 0.0 <= self.xi <= self.xi_upper:
            raise ValueError(f"xi={self.xi} outside projection bounds [0, {self.xi_upper}]")

    @property
    def lam(self) -> float:
        return 1.0 + math.exp(self.xi)

    def advance(self, xi: float) -> AdaptState:
        return replace(self, xi=xi, k=self.k + 1)


def project(xi: float, n_max: float = math.inf) -> float:
    upper = math.log(n_max - 1) if math.isfinite(n_max) else math.inf
    return min(max(0.0, xi), upper)


def step_size(k: int, beta_exponent: float) -> float:
    return k ** (-beta_exponent)


def adapt_gradient(eps_hat: float, deps_hat: float, cost: Cost, lam: float) -> float:
    return cost.derivative(lam) * (1.0 - eps_hat**2) + 2.0 * cost(lam) * deps_hat


def adapt_increment(eps_hat: float, deps_hat: float, cost: Cost, lam: float, k: int, beta_exponent: float) -> float:
    """Raw (pre-projection) change of xi at step k."""
    return -step_size(k, beta_exponent) * adapt_gradient(eps_hat, deps_hat, cost, lam)


def adapt_step(
    model: LogModel,
    x_prev,
    xi_prev: float,
    cost: Cost,
    k: int,
    cfg: AdaptConfig,
    streams: RandomStreams,
    *,
    current_logw: float | None = None,
    parallel: Parallel | None = None,
) -> tuple[object, float, StepRecord]:
    lam = 1.0 + math.exp(xi_prev)
    rec = isir_step_fractional(model, x_prev, lam, streams, k, current_logw=current_logw, parallel=parallel)
    inc = adapt_increment(rec.eps_hat, rec.deps_hat, cost, lam, k, cfg.beta_exponent)
    return rec.new_state, project(xi_prev + inc, cfg.n_max), rec


class AdaptiveRun(NamedTuple):
    trace: ChainTrace
    lambda_trace: np.ndarray
    final_lambda: float

    def post_burn_in(self, fraction: float) -> ChainTrace:
        return self.trace.tail(int(fraction * len(self.trace)))


def run_adaptive(
    model: LogModel,
    cost: Cost,
    cfg: AdaptConfig,
    seed: int | RandomStreams,
    *,
    x0=None,
    workers: int | None = None,
    keep_states: bool = False,
    checkpoint: Callable[[int, float], None] | None = None,
) -> AdaptiveRun:
    """Adaptive chain; lambda_trace[k-1] is the lambda used at iteration k."""
    streams = seed if isinstance(seed, RandomStreams) else RandomStreams(seed)
    x, lw = initial_state(model, streams) if x0 is None else (x0, None)
    state = AdaptState(cfg.initial_xi(), xi_upper=cfg.xi_upper)
    recorder = ChainRecorder(model, cfg.n_iters, keep_states=keep_states, track_xi=True)
    lam_max = cfg.n_max if math.isfinite(cfg.n_max) else 0.0
    pool = chain_parallel(workers, lam_max)
    every = max(cfg.n_iters // 10, 1)
    started = time.perf_counter()
    with pool if pool is not None else nullcontext() as parallel:
        for k in range(1, cfg.n_iters + 1):
            x, xi, rec = adapt_step(model, x, state.xi, cost, k, cfg, streams, current_logw=lw, parallel=parallel)
            lw = rec.log_weight
            recorder.append(rec, xi=state.xi)
            state = state.advance(xi)
            if k % every == 0:
                logger.info("adaptive %s: k=%d lambda=%.3f", model.name, k, state.lam)
                if checkpoint is not None:
                    checkpoint(k, state.lam)
    trace = recorder.finish(seconds=time.perf_counter() - started)
    return AdaptiveRun(trace=trace, lambda_trace=trace.lambda_used, final_lambda=state.lam)


def ols_line(timings: Sequence[tuple[int, float]]) -> tuple[float, float]:
    """Raw OLS (a, b) of T = a + b N."""
    if not timings:
        raise CostFitError("no pilot timings")
    ns = np.array([t[0] for t in timings], dtype=float)
    ts = np.array([t[1] for t in timings], dtype=float)
    if np.unique(ns).size < 2:
        raise CostFitError("≥2 distinct N required for the cost fit")
    if np.any(~np.isfinite(ts)) or np.any(ts <= 0):
        raise CostFitError(f"pilot timings must be positive, got {ts.tolist()}")
    fit = linregress(ns, ts)
    return float(fit.intercept), float(fit.slope)


def fit_cost(timings: Sequence[tuple[int, float]]) -> AffineCost:
    """OLS fit of pilot timings, rescaled to c(lambda) = a/b + lambda."""
    a, b = ols_line(timings)
    if b <= 0:
        raise CostFitError(f"cost not increasing in N (fitted slope {b:.3g}); use a larger pilot N range")
    if a < 0:
        logger.warning("fitted overhead a=%.3g < 0, clamped to 0", a)
        a = 0.0
    return AffineCost(a, b).scaled()


def loss_tilde(eps: float, cost: Cost, lam: float) -> float:
    """(1+eps)/(1-eps) c(lambda)."""
    if eps >= 1:
        raise ValueError(f"eps={eps} >= 1: approximate loss undefined")
    if eps < 0:
        raise ValueError(f"eps must be >= 0, got {eps}")
    return (1.0 + eps) / (1.0 - eps) * cost(lam)


class CostMinimum(NamedTuple):
    lam_min: float
    u_min: float
    lam_equiv: float


def u_value(lam, a: float, b: float, d: float):
    """u(lambda) = c(lambda)(d + lambda - 1)/(lambda - 1)."""
    return (a + b * lam) * (d + lam - 1.0) / (lam - 1.0)


def cost_minimum(a: float, b: float, d: float) -> CostMinimum:
    """Closed-form minimum of u over lambda > 1."""
    if a < 0 or b <= 0 or d <= 0:
        raise ValueError(f"need a >= 0, b > 0, d > 0; got a={a}, b={b}, d={d}")
    r = math.sqrt(d * (a / b + 1.0))
    return CostMinimum(
        lam_min=r + 1.0,
        u_min=2.0 * math.sqrt(b * d * (a + b)) + a + b + b * d,
        lam_equiv=2.0 * r + d + 1.0,
    )


def minimiser_upper_bound(w_hat: float, a: float, b: float) -> float:
    """Upper bound on the minimiser of c(lambda) var(P_lambda, f)."""
    return 4.0 * math.sqrt(w_hat * (a / b + 1.0)) + 4.0 * w_hat + 1.0
