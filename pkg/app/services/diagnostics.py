"""Output-side estimators: autocovariance, initial-sequence IACT, inverse relative efficiency."""
from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy import fft

from app.services.isir_kernel import ChainTrace

logger = logging.getLogger(__name__)

MIN_SERIES = 10
NON_ERGODIC = "non-ergodic at N=1"


def autocovariance(series, max_lag: int) -> np.ndarray:
    """Biased (1/n) autocovariances at lags 0..max_lag via a zero-padded FFT."""
    x = np.asarray(series, dtype=float)
    n = x.shape[0]
    if max_lag < 0 or n <= max_lag:
        raise ValueError(f"series of length {n} too short for max_lag={max_lag}")
    xc = x - x.mean()
    size = fft.next_fast_len(2 * n)
    spec = fft.rfft(xc, size)
    acov = fft.irfft(spec * np.conj(spec), size)[: max_lag + 1] / n
    return acov


@dataclass(frozen=True)
class IactEstimate:
    iact: float
    asvar: float
    truncation_lag: int
    n_samples: int
    method: str = "monotone"

    @property
    def variance(self) -> float:
        return self.asvar / self.iact if self.iact else 0.0


def initial_sequence_iact(series, monotone: bool = True) -> IactEstimate:
    """Initial positive (optionally monotone) sequence estimate of asvar and IACT.

    Gamma_m = gamma_2m + gamma_2m+1 is summed up to the first non-positive pair;
    asvar = -gamma_0 + 2 sum Gamma_m.
    """
    x = np.asarray(series, dtype=float)
    n = x.shape[0]
    method = "monotone" if monotone else "positive"
    if n < MIN_SERIES:
        raise ValueError(f"initial-sequence estimator needs at least {MIN_SERIES} samples, got {n}")
    gamma = autocovariance(x, n - 1)
    g0 = float(gamma[0])
    if g0 <= 0.0:
        # константный ряд
        return IactEstimate(1.0, 0.0, 0, n, method)
    pairs_count = n // 2
    pairs = gamma[: 2 * pairs_count : 2] + gamma[1 : 2 * pairs_count : 2]
    nonpos = np.flatnonzero(pairs <= 0.0)
    m = int(nonpos[0]) if nonpos.size else pairs_count
    m = max(m, 1)
    kept = pairs[:m]
    if monotone:
        kept = np.minimum.accumulate(kept)
    asvar = float(-g0 + 2.0 * kept.sum())
    if not nonpos.size:
        logger.warning("initial sequence never turned non-positive in %d samples; estimate truncated at the series end", n)
    if asvar <= 0.0:
        logger.warning("initial-sequence asvar %.3g is not positive (n=%d)", asvar, n)
    return IactEstimate(asvar / g0, asvar, 2 * m, n, method)


def lazy_chain(rng: np.random.Generator, sampler: Callable[[np.random.Generator, int], np.ndarray], eps: float, n: int) -> np.ndarray:
    """Hold with probability eps, otherwise an independent draw from `sampler`."""
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"holding probability must lie in [0, 1), got {eps}")
    fresh = np.asarray(sampler(rng, n))
    hold = rng.random(n) < eps
    hold[0] = False
    idx = np.maximum.accumulate(np.where(hold, 0, np.arange(n)))
    return fresh[idx]


# --- IRE ------------------------------------------------------------------


@dataclass(frozen=True)
class GridRun:
    """One fixed-lambda run after burn-in."""

    lam: float
    trace: ChainTrace
    n: int | None = None


@dataclass(frozen=True)
class IreRow:
    lam: float
    n: int | None
    sec_per_iter: float
    iact: dict[str, float] = field(default_factory=dict)
    asvar: dict[str, float] = field(default_factory=dict)
    ire: dict[str, float] = field(default_factory=dict)
    approx_loss: float = math.nan
    mean_eps: float = math.nan

    def csv_row(self, names: Sequence[str]) -> dict:
        """Columns iact_f1, iact_f2, ...: the first two names fill the f1/f2 slots."""
        slots = list(names)[:2]
        row = {"lambda": self.lam, "N": self.n if self.n is not None else math.floor(self.lam)}
        for prefix, values in (("iact", self.iact), ("asvar", self.asvar)):
            for i in range(2):
                row[f"{prefix}_f{i + 1}"] = values.get(slots[i], math.nan) if i < len(slots) else math.nan
        row["sec_per_iter"] = self.sec_per_iter
        for i in range(2):
            row[f"ire_f{i + 1}"] = self.ire.get(slots[i], math.nan) if i < len(slots) else math.nan
        row["approx_loss"] = self.approx_loss
        return row


def ire_row(run: GridRun, names: Sequence[str], monotone: bool = True) -> IreRow:
    trace = run.trace
    spi = trace.seconds_per_iter
    iact, asvar, ire = {}, {}, {}
    for name in names:
        est = initial_sequence_iact(trace.f_values[name], monotone=monotone)
        iact[name] = est.iact
        asvar[name] = est.asvar
        ire[name] = spi * est.asvar
    eps_bar = float(np.mean(trace.eps_hat)) if len(trace) else math.nan
    approx = spi * (1.0 + eps_bar) / (1.0 - eps_bar) if eps_bar < 1.0 else math.inf
    return IreRow(run.lam, run.n, spi, iact, asvar, ire, approx, eps_bar)


def ire_table(runs: Sequence[GridRun], names: Sequence[str], monotone: bool = True) -> list[IreRow]:
    """Rows sorted by lambda; the N=1 chain never moves and is left out."""
    rows = []
    for run in runs:
        if run.lam <= 1.0:
            logger.warning("lambda=%g: %s, row omitted", run.lam, NON_ERGODIC)
            continue
        rows.append(ire_row(run, names, monotone))
    rows.sort(key=lambda r: r.lam)
    return rows


def approx_loss_argmin(rows: Sequence[IreRow]) -> IreRow:
    return min(rows, key=lambda r: r.approx_loss)
