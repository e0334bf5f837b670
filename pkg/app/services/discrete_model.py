"""Finite-state models for the exact lab: masses, weights, standardised test functions."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from app.config import settings
from app.models import DiscreteMass, LogModel
from app.schemas import DiscreteModelConfig, ModelConfigError

logger = logging.getLogger(__name__)

MASS_TOL = 1e-9
TEST_FUNCTION_NAMES = ("f", "g", "h", "k", "l")


@dataclass(frozen=True)
class DiscreteModel:
    """States s_1..s_n with pi > 0, proposal masses q on them and q_outside on U."""

    states: np.ndarray
    pi: np.ndarray
    q: np.ndarray
    q_outside: float = 0.0
    name: str = "discrete"
    upper_threshold: float | None = None  # M
    lower_threshold: float | None = None  # m
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        pi = np.array(self.pi, dtype=float)
        q = np.array(self.q, dtype=float)
        states = np.array(self.states, dtype=float)
        if pi.ndim != 1 or pi.shape != q.shape or states.shape != pi.shape:
            raise ModelConfigError(f"{self.name}: states, pi and q must be 1-d of equal length")
        if np.any(pi <= 0):
            raise ModelConfigError(
                f"{self.name}: pi must be positive on every listed state; move zero-pi proposal mass into q_outside"
            )
        if abs(pi.sum() - 1.0) > MASS_TOL:
            raise ModelConfigError(f"{self.name}: pi sums to {pi.sum():.12g}, expected 1")
        if self.q_outside < 0 or np.any(q < 0):
            raise ModelConfigError(f"{self.name}: negative proposal mass")
        if abs(q.sum() + self.q_outside - 1.0) > MASS_TOL:
            raise ModelConfigError(f"{self.name}: q + q_outside sums to {q.sum() + self.q_outside:.12g}, expected 1")
        if np.any(q == 0):
            bad = np.flatnonzero(q == 0).tolist()
            raise ModelConfigError(f"{self.name}: q vanishes at states {bad} where pi > 0")
        for a in (pi, q, states):
            a.setflags(write=False)
        w = pi / q
        w.setflags(write=False)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return int(self.pi.shape[0])

    @property
    def w_hat(self) -> float:
        return float(self.weights.max())

    @property
    def has_outside(self) -> bool:
        return self.q_outside > 0

    @property
    def atoms(self) -> bool:
        return True

    @property
    def n_categories(self) -> int:
        return self.n + (1 if self.has_outside else 0)

    @property
    def upper(self) -> float:
        return self.w_hat if self.upper_threshold is None else self.upper_threshold

    @property
    def lower(self) -> float:
        return float(self.weights.min()) if self.lower_threshold is None else self.lower_threshold

    def full_q(self) -> np.ndarray:
        """Category masses including U when present."""
        return np.append(self.q, self.q_outside) if self.has_outside else self.q.copy()

    def full_weights(self) -> np.ndarray:
        return np.append(self.weights, 0.0) if self.has_outside else self.weights.copy()

    def mean(self, values: np.ndarray) -> float:
        return float(self.pi @ values)

    def variance(self, values: np.ndarray) -> float:
        mu = self.mean(values)
        return float(self.pi @ (values - mu) ** 2)


@dataclass(frozen=True)
class TestFunctionSet:
    """f identity, g = 1/w, h clipped identity, k = 1{w >= M}, l = 1{w <= m}; raw and standardised."""

    __test__ = False

    raw: dict[str, np.ndarray]
    standardised: dict[str, np.ndarray]
    upper_threshold: float
    lower_threshold: float
    dropped: tuple[str, ...] = ()

    def names(self) -> list[str]:
        return list(self.standardised)


def standardise(model: DiscreteModel, values: np.ndarray) -> np.ndarray | None:
    var = model.variance(values)
    if var <= 1e-15:
        return None
    return (values - model.mean(values)) / np.sqrt(var)


def standard_test_functions(model: DiscreteModel) -> TestFunctionSet:
    w = model.weights
    x = model.states
    upper_set = w >= model.upper - 1e-12
    lower_set = w <= model.lower + 1e-12
    outside_mass = model.pi[~upper_set].sum()
    if outside_mass > 0:
        clip_value = float(model.pi[~upper_set] @ x[~upper_set] / outside_mass)
    else:
        clip_value = 0.0
    raw = {
        "f": x.copy(),
        "g": 1.0 / w,
        "h": np.where(upper_set, clip_value, x),
        "k": upper_set.astype(float),
        "l": lower_set.astype(float),
    }
    std, dropped = {}, []
    for name in TEST_FUNCTION_NAMES:
        s = standardise(model, raw[name])
        if s is None:
            dropped.append(name)
            logger.debug("%s: test function %s is pi-a.s. constant, skipped", model.name, name)
        else:
            std[name] = s
    return TestFunctionSet(raw, std, model.upper, model.lower, tuple(dropped))


def discrete_log_model(model: DiscreteModel) -> LogModel:
    """LogModel over state indices; index n is the outside category U (pi = 0 there)."""
    fns = standard_test_functions(model)

    def _lookup(values: np.ndarray):
        padded = np.append(values, 0.0)
        return lambda idx: padded[np.asarray(idx, dtype=np.int64)]

    return LogModel(
        target=DiscreteMass(model.pi),
        proposal=DiscreteMass(model.q, outside=model.q_outside),
        name=model.name,
        w_hat=model.w_hat,
        test_functions={name: _lookup(v) for name, v in fns.standardised.items()},
        state_labels=model.states,
    )


# --- Построители моделей -------------------------------------------------


def discretised_normal_model(
    n: int = 61,
    lo: float = -3.0,
    hi: float = 3.0,
    target_var: float = 0.25,
    proposal_var: float = 1.0,
    upper_threshold: float | None = 1.9,
    lower_threshold: float | None = 0.2,
) -> DiscreteModel:
    """Two normal densities discretised on n equally spaced points, masses normalised on the grid."""
    x = np.linspace(lo, hi, int(n))
    pi = np.exp(-0.5 * x**2 / target_var)
    q = np.exp(-0.5 * x**2 / proposal_var)
    return DiscreteModel(
        states=x,
        pi=pi / pi.sum(),
        q=q / q.sum(),
        name=f"normal{int(n)}",
        upper_threshold=upper_threshold,
        lower_threshold=lower_threshold,
    )


def pi_equals_q_model(states, masses) -> DiscreteModel:
    masses = np.asarray(masses, dtype=float)
    return DiscreteModel(states=np.asarray(states, dtype=float), pi=masses, q=masses.copy(), name="pi_eq_q")


def two_state_model(pi=(0.3, 0.7), q=(0.5, 0.5), states=(1.0, 2.0)) -> DiscreteModel:
    return DiscreteModel(states=np.asarray(states, dtype=float), pi=np.asarray(pi), q=np.asarray(q), name="two_state")


def random_model(
    rng: np.random.Generator,
    n: int,
    outside: bool = False,
    concentration: float = 2.0,
    mix: float = 0.3,
) -> DiscreteModel:
    """Dirichlet masses; q is mixed with the uniform mass, so q >= mix/n and w <= n/mix."""
    pi = rng.dirichlet(np.full(n, concentration))
    q = (1.0 - mix) * rng.dirichlet(np.full(n, concentration)) + mix / n
    q_out = 0.0
    if outside:
        q_out = float(rng.uniform(0.05, 0.3))
        q = q * (1.0 - q_out)
    return DiscreteModel(states=np.arange(1, n + 1, dtype=float), pi=pi, q=q, q_outside=q_out, name=f"random{n}")


def model_from_config(cfg: DiscreteModelConfig) -> DiscreteModel:
    if cfg.generator == "discretised_normal":
        params = dict(cfg.generator_params)
        if cfg.M is not None:
            params["upper_threshold"] = cfg.M
        if cfg.m is not None:
            params["lower_threshold"] = cfg.m
        if "n" in params:
            params["n"] = int(params["n"])
        model = discretised_normal_model(**params)
        return DiscreteModel(
            states=model.states,
            pi=model.pi,
            q=model.q,
            name=cfg.name,
            upper_threshold=model.upper_threshold,
            lower_threshold=model.lower_threshold,
        )
    pi = np.asarray(cfg.pi, dtype=float)
    states = np.arange(1, pi.shape[0] + 1, dtype=float) if cfg.states is None else np.asarray(cfg.states)
    return DiscreteModel(
        states=states,
        pi=pi,
        q=np.asarray(cfg.q, dtype=float),
        q_outside=cfg.q_outside,
        name=cfg.name,
        upper_threshold=cfg.M,
        lower_threshold=cfg.m,
    )


def load_model_config(name_or_path: str | Path) -> DiscreteModelConfig:
    path = settings.get_config_path(str(name_or_path))
    if not path.is_file():
        raise FileNotFoundError(f"model config not found: {path}")
    try:
        return DiscreteModelConfig.model_validate(json.loads(path.read_text(encoding="utf-8")))
    except (ValidationError, json.JSONDecodeError) as e:
        raise ModelConfigError(f"{path}: {e}") from e


def load_discrete_model(name_or_path: str | Path) -> tuple[DiscreteModel, DiscreteModelConfig]:
    cfg = load_model_config(name_or_path)
    return model_from_config(cfg), cfg
