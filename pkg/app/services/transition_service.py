"""i-SIR transition matrices P_N on a finite state space, exact or Monte-Carlo.

With Z ~ Multinom(N-1, Q) over the states plus the outside category U (weight 0),
S = sum_k Z_k w_k and current state s_i:

    P_N(i, j) = E[(1{i=j} + Z_j) w_j / (w_i + S)]
    eps(N, i) = E[w_i / (w_i + S)]

Three evaluations are offered:
  * integral:  1/x = int_0^inf e^{-tx} dt turns every expectation into a
               one-dimensional integral of the proposal Laplace transform
               M(t) = sum_k q_k e^{-t w_k} + q_U; P(i, j) = (N-1) pi_j K_ij with
               symmetric K, so detailed balance holds by construction;
  * enumerate: sums over all compositions of N-1 (budget-capped);
  * mc:        coupled multinomial draws, Z^{N+1} = Z^N + one categorical draw.

Alongside P_N every level carries eps(N), A_N = E_pi[(W^1_N)^2] and the coupled
cross moment C_N = E_pi[W^1_N W^1_{N+1}], the pieces of eps_s at fractional lambda.
"""
from __future__ import annotations

import logging
import math
from collections.abc import Iterator, Sequence
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed
from scipy.integrate import quad_vec
from scipy.special import gammaln

from app.config import settings
from app.services.discrete_model import DiscreteModel
from app.services.rng import RandomStreams

logger = logging.getLogger(__name__)

METHODS = ("integral", "enumerate", "mc")
QUAD_EPSREL = 1e-12
QUAD_EPSABS = 1e-15
DIAGONAL_TOL = 1e-9
CHUNK_CELLS = 1 << 22


class EnumerationBudgetError(ValueError):
    pass


@dataclass(frozen=True)
class Level:
    """Integer-N quantities: P_N, eps(N, .), eps(N), A_N, C_N."""

    n: int
    matrix: np.ndarray
    eps_state: np.ndarray
    eps: float
    eps_sq: float
    eps_cross: float
    residual: float = 0.0


def _identity_level(model: DiscreteModel, eps_cross: float) -> Level:
    return Level(1, np.eye(model.n), np.ones(model.n), 1.0, 1.0, eps_cross)


# --- integral --------------------------------------------------------------


def laplace_level(model: DiscreteModel, n: int) -> Level:
    """Level N by adaptive vector quadrature over t in [0, inf), t = s/N."""
    w, q, pi = model.weights, model.q, model.pi
    q_out = model.q_outside
    size = model.n
    m = n - 1
    scale = float(n)

    def integrand(s: float) -> np.ndarray:
        t = s / scale
        e = np.exp(-t * w)
        big_m = q @ e + q_out
        phi = q @ (-np.expm1(-t * w) / w) + q_out * t
        log_m = math.log(big_m) if big_m > 0 else -math.inf
        mm = math.exp(m * log_m) if m > 0 else 1.0
        parts = [e * mm, t * e * mm, e * mm * phi]
        if m >= 1:
            mm1 = math.exp((m - 1) * log_m) if m > 1 else 1.0
            parts.append((np.outer(e, e) * mm1).ravel())
        return np.concatenate(parts) / scale

    res, err = quad_vec(integrand, 0.0, np.inf, epsrel=QUAD_EPSREL, epsabs=QUAD_EPSABS, norm="max", limit=20000)
    r, qv, cv = res[:size], res[size : 2 * size], res[2 * size : 3 * size]
    eps_state = np.clip(w * r, 0.0, 1.0)
    eps_sq = float(pi @ (w**2 * qv))
    eps_cross = float(pi @ (w**2 * cv))
    if m == 0:
        return _identity_level(model, eps_cross)

    k = res[3 * size :].reshape(size, size)
    k = 0.5 * (k + k.T)
    p = m * k * pi[None, :]
    direct_diag = eps_state + np.diag(p)
    np.fill_diagonal(p, 0.0)
    np.fill_diagonal(p, 1.0 - p.sum(axis=1))
    residual = float(np.max(np.abs(direct_diag - np.diag(p))))
    if residual > DIAGONAL_TOL:
        logger.warning("%s N=%d: quadrature diagonal residual %.2e (error estimate %.2e)", model.name, n, residual, err)
    return Level(n, p, eps_state, float(pi @ eps_state), eps_sq, eps_cross, residual)


# --- enumerate -------------------------------------------------------------


def composition_count(total: int, parts: int) -> int:
    return math.comb(total + parts - 1, parts - 1)


def _all_compositions(total: int, parts: int) -> np.ndarray:
    if parts == 1:
        return np.array([[total]], dtype=np.int64)
    blocks = []
    for z0 in range(total, -1, -1):
        rest = _all_compositions(total - z0, parts - 1)
        blocks.append(np.column_stack([np.full(rest.shape[0], z0, dtype=np.int64), rest]))
    return np.vstack(blocks)


def composition_chunks(total: int, parts: int, max_rows: int) -> Iterator[np.ndarray]:
    """All compositions of `total` into `parts` non-negative integers, in row blocks."""
    if composition_count(total, parts) <= max_rows or parts == 1:
        yield _all_compositions(total, parts)
        return
    for z0 in range(total, -1, -1):
        for chunk in composition_chunks(total - z0, parts - 1, max_rows):
            yield np.column_stack([np.full(chunk.shape[0], z0, dtype=np.int64), chunk])


def check_enumeration_budget(model: DiscreteModel, n: int, budget: int | None = None) -> int:
    budget = budget or settings.enumeration_budget
    count = composition_count(n - 1, model.n_categories)
    if count > budget:
        raise EnumerationBudgetError(
            f"{model.name}: N={n} needs {count:.3g} compositions over {model.n_categories} categories, "
            f"above the enumeration budget {budget:.3g}; use mc_transition_and_rejection (CLI: --mc) "
            f"or the integral method"
        )
    return count


def enumeration_level(model: DiscreteModel, n: int, budget: int | None = None) -> Level:
    check_enumeration_budget(model, n, budget)
    m = n - 1
    size, cats = model.n, model.n_categories
    w, pi = model.weights, model.pi
    q_full, w_full = model.full_q(), model.full_weights()
    log_q = np.log(q_full)
    max_rows = max(1, CHUNK_CELLS // (size * cats))

    p_off = np.zeros((size, size))
    eps_acc = np.zeros(size)
    sq_acc = np.zeros(size)
    cross_acc = np.zeros(size)
    for z in composition_chunks(m, cats, max_rows):
        # мультиномиальный лог-pmf по строкам блока
        log_p = gammaln(m + 1) - gammaln(z + 1).sum(axis=1) + z @ log_q
        p = np.exp(log_p)
        s = z @ w_full
        inv = 1.0 / (w[None, :] + s[:, None])
        pw = p[:, None] * inv
        p_off += pw.T @ z[:, :size]
        eps_acc += pw.sum(axis=0)
        sq_acc += (pw * inv).sum(axis=0)
        extra = (q_full[None, None, :] / (w[None, :, None] + s[:, None, None] + w_full[None, None, :])).sum(axis=2)
        cross_acc += (pw * extra).sum(axis=0)

    eps_state = w * eps_acc
    eps_cross = float(pi @ (w**2 * cross_acc))
    if m == 0:
        return _identity_level(model, eps_cross)
    p_mat = p_off * w[None, :]
    p_mat[np.diag_indices(size)] += eps_state
    return Level(n, p_mat, eps_state, float(pi @ eps_state), float(pi @ (w**2 * sq_acc)), eps_cross)


# --- Monte Carlo -----------------------------------------------------------


def symmetrise(model: DiscreteModel, p: np.ndarray) -> np.ndarray:
    """pi-symmetric part F = (Pi P + (Pi P)^T)/2 as a transition matrix."""
    f = model.pi[:, None] * p
    f = 0.5 * (f + f.T)
    out = f / model.pi[:, None]
    np.fill_diagonal(out, 0.0)
    np.fill_diagonal(out, 1.0 - out.sum(axis=1))
    return out


def mc_levels(model: DiscreteModel, n_top: int, samples: int, seed: int) -> list[Level]:
    """Coupled estimates for N = 1..n_top from one set of multinomial paths."""
    if samples < 1:
        raise ValueError(f"samples must be >= 1, got {samples}")
    rng = RandomStreams(seed).generator(0, 0)
    size, cats = model.n, model.n_categories
    w, pi = model.weights, model.pi
    q_full, w_full = model.full_q(), model.full_weights()
    z = np.zeros((samples, size), dtype=np.float64)
    s = np.zeros(samples)
    rows = np.arange(samples)

    levels: list[Level] = []
    pending = None
    for n in range(1, n_top + 2):
        inv = 1.0 / (w[None, :] + s[:, None])
        if pending is not None:
            prev_n, prev_inv, parts = pending
            cross = float(pi @ (w**2 * np.mean(prev_inv * inv, axis=0)))
            levels.append(Level(prev_n, *parts[:4], eps_cross=cross))
        if n > n_top:
            break
        mean_inv = inv.mean(axis=0)
        eps_state = w * mean_inv
        if n == 1:
            p_mat = np.eye(size)
        else:
            p_mat = (inv.T @ z) / samples * w[None, :]
            p_mat[np.diag_indices(size)] += eps_state
            p_mat = symmetrise(model, p_mat)
        eps_sq = float(pi @ (w**2 * np.mean(inv**2, axis=0)))
        pending = (n, inv, (p_mat, eps_state, float(pi @ eps_state), eps_sq))
        draws = rng.choice(cats, size=samples, p=q_full)
        real = draws < size
        z[rows[real], draws[real]] += 1.0
        s += w_full[draws]
        logger.debug("%s: MC level N=%d done", model.name, n)
    return levels


def mc_transition_and_rejection(
    model: DiscreteModel,
    n_list: Sequence[int],
    samples: int | None = None,
    seed: int = 0,
) -> tuple[dict[int, np.ndarray], dict[int, float]]:
    """Coupled Monte-Carlo P_N and eps(N) for N in n_list (ascending)."""
    n_list = list(n_list)
    if not n_list or any(b <= a for a, b in zip(n_list, n_list[1:])) or n_list[0] < 1:
        raise ValueError(f"n_list must be a non-empty ascending list of N >= 1, got {n_list}")
    levels = mc_levels(model, n_list[-1], samples or settings.mc_samples, seed)
    by_n = {lv.n: lv for lv in levels}
    return {n: by_n[n].matrix for n in n_list}, {n: by_n[n].eps for n in n_list}


# --- стек уровней ----------------------------------------------------------


@dataclass(frozen=True)
class TransitionStack:
    """Levels N = 1..n_top for one model; index N-1 in every array."""

    model: DiscreteModel
    method: str
    matrices: np.ndarray
    eps: np.ndarray
    eps_state: np.ndarray
    eps_sq: np.ndarray
    eps_cross: np.ndarray
    residual: float = 0.0

    @classmethod
    def from_levels(cls, model: DiscreteModel, method: str, levels: Sequence[Level]) -> TransitionStack:
        levels = sorted(levels, key=lambda lv: lv.n)
        if [lv.n for lv in levels] != list(range(1, len(levels) + 1)):
            raise ValueError("levels must cover N = 1..n_top without gaps")
        stack = cls(
            model=model,
            method=method,
            matrices=np.stack([lv.matrix for lv in levels]),
            eps=np.array([lv.eps for lv in levels]),
            eps_state=np.stack([lv.eps_state for lv in levels]),
            eps_sq=np.array([lv.eps_sq for lv in levels]),
            eps_cross=np.array([lv.eps_cross for lv in levels]),
            residual=max(lv.residual for lv in levels),
        )
        for a in (stack.matrices, stack.eps, stack.eps_state, stack.eps_sq, stack.eps_cross):
            a.setflags(write=False)
        return stack

    @property
    def n_top(self) -> int:
        return int(self.eps.shape[0])

    def matrix(self, n: int) -> np.ndarray:
        if not 1 <= n <= self.n_top:
            raise IndexError(f"N={n} outside 1..{self.n_top}")
        return self.matrices[n - 1]

    def balance_residual(self) -> float:
        """max |pi_i P(i,j) - pi_j P(j,i)| over all levels."""
        f = self.model.pi[None, :, None] * self.matrices
        return float(np.max(np.abs(f - np.transpose(f, (0, 2, 1)))))


def _level(model: DiscreteModel, n: int, method: str, budget: int | None) -> Level:
    if method == "integral":
        return laplace_level(model, n)
    return enumeration_level(model, n, budget)


def transition_stack(
    model: DiscreteModel,
    n_max: int,
    method: str = "integral",
    *,
    samples: int | None = None,
    seed: int | None = None,
    workers: int | None = None,
    budget: int | None = None,
) -> TransitionStack:
    """P_1..P_{n_max+1} with eps, A and C; the top level covers lambda = n_max exactly."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    n_top = int(n_max) + 1
    if method == "mc":
        if seed is None:
            raise ValueError("Monte-Carlo transition estimates need an explicit seed")
        levels = mc_levels(model, n_top, samples or settings.mc_samples, seed)
        return TransitionStack.from_levels(model, method, levels)
    if method == "enumerate":
        check_enumeration_budget(model, n_top, budget)
    n_jobs = settings.effective_workers(workers)
    if n_jobs > 1:
        levels = Parallel(n_jobs=n_jobs)(delayed(_level)(model, n, method, budget) for n in range(1, n_top + 1))
    else:
        levels = [_level(model, n, method, budget) for n in range(1, n_top + 1)]
    stack = TransitionStack.from_levels(model, method, levels)
    logger.info("%s: %s stack N=1..%d, balance residual %.1e", model.name, method, n_top, stack.balance_residual())
    return stack


def exact_transition_matrix(model: DiscreteModel, n: int, method: str = "enumerate", budget: int | None = None) -> np.ndarray:
    if n < 1:
        raise ValueError(f"N must be >= 1, got {n}")
    if method not in ("integral", "enumerate"):
        raise ValueError(f"exact method must be integral or enumerate, got {method!r}")
    return _level(model, n, method, budget).matrix


def interpolated_matrix(stack: TransitionStack, lam: float) -> np.ndarray:
    """P_lambda = beta P_floor + (1 - beta) P_{floor+1}, beta = floor(lambda) + 1 - lambda."""
    if lam < 1:
        raise ValueError(f"lambda must be >= 1, got {lam}")
    n = math.floor(lam)
    beta = n + 1 - lam
    if beta == 1.0:
        return stack.matrix(n).copy()
    return beta * stack.matrix(n) + (1.0 - beta) * stack.matrix(n + 1)
