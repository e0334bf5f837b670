"""i-SIR Markov kernel for integer N and fractional lambda, plus chain traces.

One iteration at lambda: N̄ = floor(lambda)+1 candidates (the current state
first, then N̄-1 fresh proposals), a beta = N̄ - lambda coin chooses whether the
selection uses the first N̄-1 or all N̄ of them. The rejection estimators always
use the full batch.
"""
from __future__ import annotations

import logging
import math
import time
from collections.abc import Callable, Iterator
from contextlib import nullcontext
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from scipy.special import logsumexp

from app.config import settings
from app.models import LogModel, log_weights
from app.services.rng import RandomStreams

logger = logging.getLogger(__name__)

# тест-функции считаются пачками по стольку состояний
EVAL_CHUNK = 4096


class ZeroWeightBatchError(RuntimeError):
    """All candidates eligible for selection have zero importance weight."""


class InitialisationError(RuntimeError):
    """No proposal draw with positive weight within the attempt cap."""


def fractional_counts(lam: float) -> tuple[int, float]:
    """(N̄, beta) for lambda >= 1; integer lambda gives beta = 1."""
    if not (math.isfinite(lam) and lam >= 1.0):
        raise ValueError(f"lambda must be a finite real >= 1, got {lam}")
    nbar = math.floor(lam) + 1
    return nbar, float(nbar - lam)


@dataclass(frozen=True)
class ProposalBatch:
    states: np.ndarray  # N̄ candidates, states[0] = previous chain state
    log_weights: np.ndarray
    nbar: int
    beta: float
    n_used: int
    u_select: float

    def __post_init__(self) -> None:
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        if not 1 <= self.n_used <= self.nbar:
            raise ValueError(f"n_used={self.n_used} outside 1..{self.nbar}")
        if len(self.states) != self.nbar or self.log_weights.shape != (self.nbar,):
            raise ValueError(f"batch must hold exactly nbar={self.nbar} candidates")

    @property
    def lam(self) -> float:
        return self.nbar - self.beta


@dataclass(frozen=True)
class StepRecord:
    new_state: np.ndarray | int | None
    accepted_index: int  # 1-based, 1 = previous state kept
    eps_hat: float
    deps_hat: float
    lambda_used: float
    n_used: int
    log_weight: float | None = None


def _draw_block(model: LogModel, streams: RandomStreams, k: int, b: int, size: int):
    ys = model.sample_proposal(streams.block(k, b), size)
    return ys, log_weights(model, ys)


def draw_proposals(
    model: LogModel,
    streams: RandomStreams,
    k: int,
    count: int,
    parallel: Parallel | None = None,
    block_size: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """`count` proposals of iteration k with their log-weights, block b from substream (k, b)."""
    block_size = block_size or settings.proposal_block
    sizes = [block_size] * (count // block_size)
    if count % block_size:
        sizes.append(count % block_size)
    if parallel is not None and len(sizes) > 1:
        parts = parallel(delayed(_draw_block)(model, streams, k, b, s) for b, s in enumerate(sizes))
    else:
        parts = [_draw_block(model, streams, k, b, s) for b, s in enumerate(sizes)]
    states = np.concatenate([p[0] for p in parts])
    logw = np.concatenate([p[1] for p in parts])
    return states, logw


def draw_batch(
    model: LogModel,
    current,
    lam: float,
    streams: RandomStreams,
    k: int,
    *,
    current_logw: float | None = None,
    parallel: Parallel | None = None,
) -> ProposalBatch:
    nbar, beta = fractional_counts(lam)
    ctrl = streams.control(k)
    # монетка тянется всегда, даже при beta = 1
    u_coin, u_select = ctrl.random(2)
    n_used = nbar - 1 if u_coin < beta else nbar

    cur = model.as_batch(current)
    lw_cur = log_weights(model, cur) if current_logw is None else np.array([current_logw])
    props, lw_props = draw_proposals(model, streams, k, nbar - 1, parallel)
    return ProposalBatch(
        states=np.concatenate([cur, props]),
        log_weights=np.concatenate([lw_cur, lw_props]),
        nbar=nbar,
        beta=beta,
        n_used=n_used,
        u_select=float(u_select),
    )


def select_index(batch: ProposalBatch) -> int:
    """0-based index I-1, inverse CDF over the first n_used normalised weights."""
    lw = batch.log_weights[: batch.n_used]
    top = np.max(lw)
    if top == -np.inf:
        raise ZeroWeightBatchError(f"all {batch.n_used} candidate weights are zero")
    cdf = np.cumsum(np.exp(lw - top))
    idx = int(np.searchsorted(cdf, batch.u_select * cdf[-1], side="right"))
    return min(idx, batch.n_used - 1)


def rejection_estimates(batch: ProposalBatch) -> tuple[float, float]:
    """(eps_hat, deps_hat) from the full batch of N̄ candidates."""
    lw = batch.log_weights
    lw1 = lw[0]
    if lw1 == -np.inf:
        return 0.0, 0.0
    w1_first = math.exp(lw1 - logsumexp(lw[: batch.nbar - 1]))
    w1_all = math.exp(lw1 - logsumexp(lw))
    w1_first = min(w1_first, 1.0)
    w1_all = min(w1_all, w1_first)
    eps_hat = batch.beta * w1_first + (1.0 - batch.beta) * w1_all
    return eps_hat, w1_all - w1_first


def isir_step_fractional(
    model: LogModel,
    current,
    lam: float,
    streams: RandomStreams,
    k: int,
    *,
    current_logw: float | None = None,
    parallel: Parallel | None = None,
) -> StepRecord:
    batch = draw_batch(model, current, lam, streams, k, current_logw=current_logw, parallel=parallel)
    i = select_index(batch)
    eps_hat, deps_hat = rejection_estimates(batch)
    return StepRecord(
        new_state=batch.states[i],
        accepted_index=i + 1,
        eps_hat=eps_hat,
        deps_hat=deps_hat,
        lambda_used=batch.lam,
        n_used=batch.n_used,
        log_weight=float(batch.log_weights[i]),
    )


def isir_step(
    model: LogModel,
    current,
    n: int,
    streams: RandomStreams,
    k: int,
    *,
    parallel: Parallel | None = None,
):
    """Integer-N step: (new state, accepted index I in 1..n)."""
    if int(n) != n or n < 1:
        raise ValueError(f"n must be an integer >= 1, got {n}")
    rec = isir_step_fractional(model, current, float(n), streams, k, parallel=parallel)
    return rec.new_state, rec.accepted_index


def initial_state(model: LogModel, streams: RandomStreams, max_attempts: int | None = None):
    """Proposal draw with w(x0) > 0; returns (x0, log w(x0))."""
    max_attempts = max_attempts or settings.init_max_attempts
    rng = streams.initial()
    for attempt in range(1, max_attempts + 1):
        x = model.sample_proposal(rng, 1)
        lw = float(log_weights(model, x)[0])
        if lw > -np.inf:
            if attempt > 1:
                logger.debug("%s: initial state found after %d draws", model.name, attempt)
            return x[0], lw
    raise InitialisationError(f"{model.name}: no proposal with positive weight in {max_attempts} draws")


@dataclass(frozen=True)
class ChainTrace:
    """Columnar chain trace; trace[k] is the StepRecord of iteration k+1."""

    accepted_index: np.ndarray
    n_used: np.ndarray
    eps_hat: np.ndarray
    deps_hat: np.ndarray
    lambda_used: np.ndarray
    f_values: dict[str, np.ndarray] = field(default_factory=dict)
    states: np.ndarray | None = None
    xi: np.ndarray | None = None
    seconds: float = 0.0

    def __len__(self) -> int:
        return int(self.accepted_index.shape[0])

    def __getitem__(self, i: int) -> StepRecord:
        return StepRecord(
            new_state=None if self.states is None else self.states[i],
            accepted_index=int(self.accepted_index[i]),
            eps_hat=float(self.eps_hat[i]),
            deps_hat=float(self.deps_hat[i]),
            lambda_used=float(self.lambda_used[i]),
            n_used=int(self.n_used[i]),
        )

    def __iter__(self) -> Iterator[StepRecord]:
        for i in range(len(self)):
            yield self[i]

    @property
    def seconds_per_iter(self) -> float:
        return self.seconds / len(self) if len(self) else 0.0

    def tail(self, burn_in: int) -> ChainTrace:
        s = slice(burn_in, None)
        return ChainTrace(
            accepted_index=self.accepted_index[s],
            n_used=self.n_used[s],
            eps_hat=self.eps_hat[s],
            deps_hat=self.deps_hat[s],
            lambda_used=self.lambda_used[s],
            f_values={name: v[s] for name, v in self.f_values.items()},
            states=None if self.states is None else self.states[s],
            xi=None if self.xi is None else self.xi[s],
            seconds=self.seconds * (len(self) - min(burn_in, len(self))) / max(len(self), 1),
        )

    def rows(self, include_state: bool = False) -> Iterator[dict]:
        """One serialisable row per iteration."""
        for i in range(len(self)):
            row = {
                "k": i + 1,
                "lambda": float(self.lambda_used[i]),
                "N_used": int(self.n_used[i]),
                "I": int(self.accepted_index[i]),
                "eps_hat": float(self.eps_hat[i]),
                "deps_hat": float(self.deps_hat[i]),
            }
            if self.xi is not None:
                row["xi"] = float(self.xi[i])
            if include_state and self.states is not None:
                st = self.states[i]
                row["state"] = st.tolist() if isinstance(st, np.ndarray) else int(st)
            for name, values in self.f_values.items():
                row[f"f_{name}"] = float(values[i])
            yield row


class ChainRecorder:
    """Accumulates StepRecords into a ChainTrace; test functions are evaluated in chunks."""

    def __init__(self, model: LogModel, n_iters: int, keep_states: bool = False, track_xi: bool = False):
        self.model = model
        self.n = n_iters
        self.keep_states = keep_states
        self._i = 0
        self._accepted = np.zeros(n_iters, dtype=np.int64)
        self._n_used = np.zeros(n_iters, dtype=np.int64)
        self._eps = np.zeros(n_iters)
        self._deps = np.zeros(n_iters)
        self._lam = np.zeros(n_iters)
        self._xi = np.zeros(n_iters) if track_xi else None
        self._f = {name: np.zeros(n_iters) for name in model.test_functions}
        self._states: list = []
        self._pending: list = []
        self._pending_start = 0

    def append(self, rec: StepRecord, xi: float | None = None) -> None:
        i = self._i
        self._accepted[i] = rec.accepted_index
        self._n_used[i] = rec.n_used
        self._eps[i] = rec.eps_hat
        self._deps[i] = rec.deps_hat
        self._lam[i] = rec.lambda_used
        if self._xi is not None:
            self._xi[i] = xi
        if self._f or self.keep_states:
            self._pending.append(rec.new_state)
            if len(self._pending) >= EVAL_CHUNK:
                self._flush()
        self._i += 1

    def _flush(self) -> None:
        if not self._pending:
            return
        batch = np.stack(self._pending) if not self.model.discrete else np.asarray(self._pending, dtype=np.int64)
        s = slice(self._pending_start, self._pending_start + len(self._pending))
        for name, values in self.model.evaluate(batch).items():
            self._f[name][s] = values
        if self.keep_states:
            self._states.append(batch)
        self._pending_start += len(self._pending)
        self._pending = []

    def finish(self, seconds: float = 0.0) -> ChainTrace:
        self._flush()
        n = self._i
        states = None
        if self.keep_states:
            states = np.concatenate(self._states) if self._states else np.zeros((0,))
        arrays = [self._accepted[:n], self._n_used[:n], self._eps[:n], self._deps[:n], self._lam[:n]]
        for a in arrays:
            a.setflags(write=False)
        return ChainTrace(
            *arrays,
            f_values={name: v[:n] for name, v in self._f.items()},
            states=states,
            xi=None if self._xi is None else self._xi[:n],
            seconds=seconds,
        )


def chain_parallel(workers: int | None, lam_max: float) -> Parallel | None:
    """Thread pool for the proposal blocks, only when a batch spans several blocks."""
    n_workers = settings.effective_workers(workers)
    if n_workers <= 1 or math.floor(lam_max) <= settings.proposal_block:
        return None
    return Parallel(n_jobs=n_workers, backend="threading")


def run_chain(
    model: LogModel,
    x0,
    lam: float,
    n_iters: int,
    seed: int | RandomStreams,
    *,
    workers: int | None = None,
    keep_states: bool = False,
    progress: Callable[[int], None] | None = None,
) -> ChainTrace:
    """Fixed-lambda chain; identical output for identical (seed, model, lambda) at any worker count."""
    if n_iters < 0:
        raise ValueError(f"n_iters must be non-negative, got {n_iters}")
    fractional_counts(lam)
    streams = seed if isinstance(seed, RandomStreams) else RandomStreams(seed)
    if x0 is None:
        x, lw = initial_state(model, streams)
    else:
        x, lw = x0, None
    recorder = ChainRecorder(model, n_iters, keep_states=keep_states)
    pool = chain_parallel(workers, lam)
    started = time.perf_counter()
    with pool if pool is not None else nullcontext() as parallel:
        for k in range(1, n_iters + 1):
            rec = isir_step_fractional(model, x, lam, streams, k, current_logw=lw, parallel=parallel)
            recorder.append(rec)
            x, lw = rec.new_state, rec.log_weight
            if progress is not None:
                progress(k)
    return recorder.finish(seconds=time.perf_counter() - started)

