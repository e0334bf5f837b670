"""Target/proposal densities, importance weights in log space, experiment models.

Все веса живут в лог-пространстве: логистическая апостериорная плотность
занимает сотни лог-единиц, нормировка только через сдвиг на максимум.
"""
from __future__ import annotations

import logging
import math
from abc import ABC, abstractmethod
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from types import MappingProxyType

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammaln, logsumexp

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)

TestFunction = Callable[[np.ndarray], np.ndarray]


class DominationError(ValueError):
    """q does not dominate pi at some state: finite log pi_u where log q is not finite."""


class Density(ABC):
    """Log-density over a batch of states.

    Continuous states are float arrays of shape (m, dim); discrete states are
    integer indices of shape (m,).
    """

    dim: int | None = None

    @abstractmethod
    def logpdf(self, xs: np.ndarray) -> np.ndarray: ...


class ProposalDensity(Density):
    @abstractmethod
    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray: ...


class GaussianDensity(ProposalDensity):
    """N(mean, cov); used for the logistic prior and the Laplace component."""

    def __init__(self, mean: Sequence[float] | np.ndarray, cov: np.ndarray | float):
        self.mean = np.asarray(mean, dtype=float).copy()
        self.dim = self.mean.shape[0]
        cov = np.asarray(cov, dtype=float)
        if cov.ndim == 0:
            cov = float(cov) * np.eye(self.dim)
        self.cov = cov.copy()
        self.chol = np.linalg.cholesky(self.cov)
        self._log_det = 2.0 * float(np.sum(np.log(np.diag(self.chol))))
        self.mean.setflags(write=False)
        self.cov.setflags(write=False)

    def logpdf(self, xs: np.ndarray) -> np.ndarray:
        xs = np.atleast_2d(xs)
        z = solve_triangular(self.chol, (xs - self.mean).T, lower=True)
        return -0.5 * (np.sum(z * z, axis=0) + self._log_det + self.dim * LOG_2PI)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        z = rng.standard_normal((size, self.dim))
        return self.mean + z @ self.chol.T


class StudentTProposal(ProposalDensity):
    """Multivariate Student-t with identity shape.

    Sampling uses the scale-mixture representation Z / sqrt(chi2_nu / nu).
    """

    def __init__(self, dof: float, location: Sequence[float] | np.ndarray | None = None, dim: int | None = None):
        if not dof > 0:
            raise ValueError(f"Student-t dof must be positive, got {dof}")
        if location is None:
            if dim is None:
                raise ValueError("either location or dim is required")
            location = np.zeros(dim)
        self.location = np.asarray(location, dtype=float).copy()
        self.location.setflags(write=False)
        self.dim = self.location.shape[0]
        self.dof = float(dof)
        nu, d = self.dof, self.dim
        self._log_norm = gammaln(0.5 * (nu + d)) - gammaln(0.5 * nu) - 0.5 * d * math.log(nu * math.pi)

    def logpdf(self, xs: np.ndarray) -> np.ndarray:
        xs = np.atleast_2d(xs)
        r2 = np.sum((xs - self.location) ** 2, axis=1)
        return self._log_norm - 0.5 * (self.dof + self.dim) * np.log1p(r2 / self.dof)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        z = rng.standard_normal((size, self.dim))
        chi2 = rng.chisquare(self.dof, size=size)
        return self.location + z / np.sqrt(chi2 / self.dof)[:, None]


class GaussianMixtureTarget(Density):
    """Equal-shape Gaussian mixture; components have covariance scale**2 * I."""

    def __init__(self, modes: Sequence[Sequence[float]], weights: Sequence[float], scale: float = 1.0):
        self.modes = np.asarray(modes, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        if self.modes.ndim != 2:
            raise ValueError("all mode vectors must share the same dimension")
        if self.weights.shape != (self.modes.shape[0],) or np.any(self.weights <= 0):
            raise ValueError("mixture weights must be positive, one per mode")
        if not math.isclose(float(self.weights.sum()), 1.0, abs_tol=1e-12):
            raise ValueError(f"mixture weights must sum to 1, got {self.weights.sum()}")
        self.scale = float(scale)
        self.dim = self.modes.shape[1]
        self._log_w = np.log(self.weights)

    def logpdf(self, xs: np.ndarray) -> np.ndarray:
        xs = np.atleast_2d(xs)
        d2 = np.sum((xs[:, None, :] - self.modes[None, :, :]) ** 2, axis=2) / self.scale**2
        comp = -0.5 * d2 - 0.5 * self.dim * (LOG_2PI + 2.0 * math.log(self.scale))
        return logsumexp(comp + self._log_w, axis=1)

    def mean(self) -> np.ndarray:
        return self.weights @ self.modes


class DefensiveMixtureProposal(ProposalDensity):
    """q(x) = sum_k weight_k q_k(x); heavy component keeps the weights bounded."""

    def __init__(self, components: Sequence[tuple[float, ProposalDensity]]):
        if not components:
            raise ValueError("defensive mixture needs at least one component")
        self.weights = np.array([w for w, _ in components], dtype=float)
        self.components = tuple(c for _, c in components)
        if np.any(self.weights <= 0) or not math.isclose(float(self.weights.sum()), 1.0, abs_tol=1e-12):
            raise ValueError(f"mixture weights must be positive and sum to 1, got {self.weights.tolist()}")
        dims = {c.dim for c in self.components}
        if len(dims) != 1:
            raise ValueError(f"mixture components disagree on dimension: {sorted(dims)}")
        self.dim = dims.pop()
        self._log_w = np.log(self.weights)

    def logpdf(self, xs: np.ndarray) -> np.ndarray:
        xs = np.atleast_2d(xs)
        comp = np.stack([c.logpdf(xs) for c in self.components], axis=1)
        return logsumexp(comp + self._log_w, axis=1)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        labels = rng.choice(len(self.components), size=size, p=self.weights)
        out = np.empty((size, self.dim))
        for k, comp in enumerate(self.components):
            idx = np.flatnonzero(labels == k)
            if idx.size:
                out[idx] = comp.sample(rng, idx.size)
        return out


class DiscreteMass(ProposalDensity):
    """Mass function over state indices 0..n-1, plus index n for the outside category U."""

    def __init__(self, masses: Sequence[float] | np.ndarray, outside: float = 0.0):
        self.masses = np.asarray(masses, dtype=float).copy()
        self.outside = float(outside)
        if np.any(self.masses < 0) or self.outside < 0:
            raise ValueError("masses must be non-negative")
        full = np.append(self.masses, self.outside)
        with np.errstate(divide="ignore"):
            self._log_full = np.log(full)
        self._p_full = full / full.sum()
        self.n_states = self.masses.shape[0]

    def logpdf(self, xs: np.ndarray) -> np.ndarray:
        idx = np.atleast_1d(np.asarray(xs, dtype=np.int64))
        return self._log_full[idx]

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.choice(self.n_states + 1, size=size, p=self._p_full)


class ShiftedDensity(Density):
    """log pi_u + shift; the unnormalised target of the same distribution."""

    def __init__(self, base: Density, shift: float):
        self.base = base
        self.shift = float(shift)
        self.dim = base.dim

    def logpdf(self, xs: np.ndarray) -> np.ndarray:
        return self.base.logpdf(xs) + self.shift


class LogisticPosterior(Density):
    """Bayesian logistic regression posterior (unnormalised) with N(0, prior_variance I) prior.

    Gradient and Hessian are hand-coded.
    """

    def __init__(self, design_matrix: np.ndarray, labels: np.ndarray, prior_variance: float = 20.0):
        X = np.asarray(design_matrix, dtype=float)
        y = np.asarray(labels, dtype=float)
        if X.ndim != 2:
            raise ValueError("design matrix must be two-dimensional")
        if not np.all(np.isfinite(X)):
            raise ValueError("design matrix has non-finite entries")
        if y.shape != (X.shape[0],) or not np.all((y == 0) | (y == 1)):
            raise ValueError("labels must be 0/1, one per design row")
        if not prior_variance > 0:
            raise ValueError(f"prior variance must be positive, got {prior_variance}")
        self.X = X
        self.y = y
        self.prior_variance = float(prior_variance)
        self.dim = X.shape[1]
        self.X.setflags(write=False)
        self.y.setflags(write=False)

    def prior(self) -> GaussianDensity:
        return GaussianDensity(np.zeros(self.dim), self.prior_variance)

    def logpdf(self, xs: np.ndarray) -> np.ndarray:
        xs = np.atleast_2d(xs)
        eta = xs @ self.X.T
        loglik = np.sum(self.y * eta - np.logaddexp(0.0, eta), axis=1)
        logprior = -0.5 * np.sum(xs * xs, axis=1) / self.prior_variance - 0.5 * self.dim * (
            LOG_2PI + math.log(self.prior_variance)
        )
        return loglik + logprior

    def log_posterior(self, x: np.ndarray) -> float:
        return float(self.logpdf(x)[0])

    def gradient(self, x: np.ndarray) -> np.ndarray:
        eta = self.X @ x
        p = 0.5 * (1.0 + np.tanh(0.5 * eta))
        return self.X.T @ (self.y - p) - x / self.prior_variance

    def hessian(self, x: np.ndarray) -> np.ndarray:
        eta = self.X @ x
        p = 0.5 * (1.0 + np.tanh(0.5 * eta))
        s = p * (1.0 - p)
        return -(self.X.T * s) @ self.X - np.eye(self.dim) / self.prior_variance


@dataclass(frozen=True)
class LaplaceApproximation:
    mode: np.ndarray
    covariance: np.ndarray
    grad_norm: float = 0.0
    iterations: int = 0

    def density(self) -> GaussianDensity:
        return GaussianDensity(self.mode, self.covariance)


@dataclass(frozen=True)
class LogModel:
    """Target/proposal pair: log pi_u, log q, sampling from q.

    w_hat is optional metadata (a known weight bound); only bound checks read it,
    the sampler never does.
    """

    target: Density
    proposal: ProposalDensity
    name: str = "model"
    w_hat: float | None = None
    test_functions: Mapping[str, TestFunction] = field(default_factory=dict)
    state_labels: np.ndarray | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "test_functions", MappingProxyType(dict(self.test_functions)))

    @property
    def discrete(self) -> bool:
        return self.proposal.dim is None

    @property
    def dim(self) -> int | str:
        return "discrete" if self.discrete else int(self.proposal.dim)

    def as_batch(self, xs) -> np.ndarray:
        if self.discrete:
            return np.atleast_1d(np.asarray(xs, dtype=np.int64))
        return np.atleast_2d(np.asarray(xs, dtype=float))

    def log_target_u(self, xs) -> np.ndarray:
        return self.target.logpdf(self.as_batch(xs))

    def log_proposal(self, xs) -> np.ndarray:
        return self.proposal.logpdf(self.as_batch(xs))

    def sample_proposal(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.proposal.sample(rng, size)

    def evaluate(self, xs) -> dict[str, np.ndarray]:
        batch = self.as_batch(xs)
        return {name: np.asarray(fn(batch), dtype=float) for name, fn in self.test_functions.items()}

    def with_target_shift(self, shift: float) -> LogModel:
        return LogModel(
            target=ShiftedDensity(self.target, shift),
            proposal=self.proposal,
            name=f"{self.name}+{shift:g}",
            w_hat=None if self.w_hat is None else self.w_hat * math.exp(shift),
            test_functions=dict(self.test_functions),
            state_labels=self.state_labels,
        )


def log_weights(model: LogModel, xs) -> np.ndarray:
    """log w(x) = log pi_u(x) - log q(x) over a batch; -inf where pi_u vanishes."""
    lt = np.asarray(model.log_target_u(xs), dtype=float)
    lq = np.asarray(model.log_proposal(xs), dtype=float)
    out = np.full(lt.shape, -np.inf)
    pos = lt > -np.inf
    if np.any(np.isnan(lt)):
        raise DominationError(f"{model.name}: NaN log target density")
    bad = pos & ~np.isfinite(lq)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise DominationError(
            f"{model.name}: log q = {lq[i]} at a state with log pi_u = {lt[i]} (proposal does not dominate target)"
        )
    if np.any(lt[pos] == np.inf):
        raise DominationError(f"{model.name}: infinite target density")
    out[pos] = lt[pos] - lq[pos]
    return out


def log_weight(model: LogModel, x) -> float:
    return float(log_weights(model, x)[0])


def normalised_weights(logw: np.ndarray) -> np.ndarray:
    """W_i = w_i / sum_j w_j by max-shift exponentiation."""
    logw = np.asarray(logw, dtype=float)
    top = np.max(logw)
    if top == -np.inf:
        raise ValueError("all weights are zero")
    w = np.exp(logw - top)
    return w / w.sum()


# --- Модели экспериментов -------------------------------------------------

MIXTURE_DIM = 7


def mixture_sets(dim: int = MIXTURE_DIM) -> tuple[np.ndarray, np.ndarray]:
    """Boxes A and B of the second mixture test function, as (dim, 2) bounds."""
    a = np.array([[-2.0, 6.0]] + [[-1.0, 1.0]] * (dim - 1))
    b = np.array([[0.75, 1.25], [1.0, 2.0]] + [[-0.1, 0.1]] * (dim - 2))
    return a, b


def _in_box(xs: np.ndarray, box: np.ndarray) -> np.ndarray:
    return np.all((xs >= box[:, 0]) & (xs <= box[:, 1]), axis=1)


def build_mixture_model(dim: int = MIXTURE_DIM, dof: float = 3.0) -> LogModel:
    """Two-mode Gaussian mixture, modes (1,...,1) and (-2,0,...,0), Student-t proposal."""
    m1 = np.ones(dim)
    m2 = np.zeros(dim)
    m2[0] = -2.0
    target = GaussianMixtureTarget([m1, m2], [0.5, 0.5])
    proposal = StudentTProposal(dof, dim=dim)
    box_a, box_b = mixture_sets(dim)
    return LogModel(
        target=target,
        proposal=proposal,
        name=f"mixture{dim}",
        test_functions={
            "f1": lambda xs: xs[:, 0],
            "f2": lambda xs: _in_box(xs, box_a).astype(float) - _in_box(xs, box_b).astype(float),
        },
    )


def build_logistic_model(
    posterior: LogisticPosterior,
    laplace: LaplaceApproximation,
    prior_weight: float = 0.1,
) -> LogModel:
    """Logistic posterior with the defensive proposal 0.1 prior + 0.9 Laplace."""
    proposal = DefensiveMixtureProposal(
        [(prior_weight, posterior.prior()), (1.0 - prior_weight, laplace.density())]
    )
    mu = laplace.mode.copy()
    return LogModel(
        target=posterior,
        proposal=proposal,
        name="logistic",
        test_functions={
            # f1 = pi_u(x): unnormalised posterior value
            "f1": lambda xs: np.exp(posterior.logpdf(xs)),
            "f2": lambda xs: np.linalg.norm(xs - mu, axis=1),
        },
    )


def build_gaussian_t_model(dof: float = 3.0) -> LogModel:
    """1-d N(0,1) target with Student-t proposal; small continuous fixture model."""
    return LogModel(
        target=GaussianDensity([0.0], 1.0),
        proposal=StudentTProposal(dof, dim=1),
        name="normal-t",
        test_functions={"f1": lambda xs: xs[:, 0], "f2": lambda xs: (xs[:, 0] > 0).astype(float)},
    )
