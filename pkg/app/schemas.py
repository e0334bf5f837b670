"""Pydantic schemas: model/experiment config files, CSV rows, HTTP API."""
from __future__ import annotations

import math
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

TABLE_COST_A = [0.0, 0.1, 1.0, 2.0, 5.0, 10.0, 20.0]


class ModelConfigError(ValueError):
    pass


# Сетка lambda
class GridConfig(BaseModel):
    lo: float = 2.0
    hi: float = 150.0
    step: float = Field(default=0.01, gt=0)

    @model_validator(mode="after")
    def _check(self) -> GridConfig:
        if self.lo < 1 + self.step - 1e-12:
            raise ValueError(f"grid lo={self.lo} must be >= 1 + step")
        if self.hi < self.lo:
            raise ValueError(f"grid hi={self.hi} below lo={self.lo}")
        return self


class ReferenceRow(BaseModel):
    """One published minimiser row: lambda_G plus per-function minimiser and SO_G."""

    a: float
    lambda_G: float
    minimisers: dict[str, float] = {}
    so_G: dict[str, float] = {}


class DiscreteModelConfig(BaseModel):
    """Finite-state model file: explicit masses or a named generator."""

    name: str = "discrete"
    states: list[float] | None = None
    pi: list[float] | None = None
    q: list[float] | None = None
    q_outside: float = Field(default=0.0, ge=0)
    M: float | None = None
    m: float | None = None
    generator: Literal["discretised_normal"] | None = None
    generator_params: dict[str, float] = {}
    provenance: str = ""
    method: Literal["integral", "enumerate", "mc"] = "integral"
    mc_samples: int | None = Field(default=None, gt=0)
    cost_a: list[float] = Field(default_factory=lambda: list(TABLE_COST_A))
    grid: GridConfig = Field(default_factory=GridConfig)
    reference_table: list[ReferenceRow] = []

    @model_validator(mode="after")
    def _check_masses(self) -> DiscreteModelConfig:
        if self.generator is not None:
            return self
        if self.pi is None or self.q is None:
            raise ValueError("either a generator or explicit pi and q are required")
        if len(self.pi) != len(self.q):
            raise ValueError(f"pi has {len(self.pi)} entries, q has {len(self.q)}")
        if self.states is not None and len(self.states) != len(self.pi):
            raise ValueError(f"{len(self.states)} state labels for {len(self.pi)} masses")
        return self


class ContinuousModelSpec(BaseModel):
    name: Literal["mixture", "logistic", "normal-t"]
    dim: int = Field(default=7, ge=1)
    dof: float = Field(default=3.0, gt=0)
    data_path: str | None = None
    prior_weight: float = Field(default=0.1, gt=0, lt=1)


class CostSpec(BaseModel):
    a: float = Field(ge=0)
    b: float = Field(default=1.0, gt=0)


ExperimentKind = Literal["discrete-analysis", "adaptive-run", "fixed-grid-run", "pilot-cost"]


class ExperimentConfig(BaseModel):
    kind: ExperimentKind
    model: str | DiscreteModelConfig | ContinuousModelSpec
    seed: int = Field(ge=0)
    cost_a: list[float] | None = None
    grid: GridConfig | None = None
    iters: int | None = Field(default=None, ge=0)
    burn_in: float | None = Field(default=None, ge=0, lt=1)
    n_list: list[int] = []
    n_max: float | None = None
    beta: float | None = Field(default=None, gt=0)
    cost: CostSpec | None = None
    cost_file: str | None = None
    mc: bool = False
    mc_samples: int | None = Field(default=None, gt=0)
    method: Literal["integral", "enumerate", "mc"] | None = None
    workers: int | None = Field(default=None, ge=0)
    output_dir: str | None = None
    dry_run: bool = False
    keep_states: bool = False

    @field_validator("n_list")
    @classmethod
    def _positive_n(cls, v: list[int]) -> list[int]:
        if any(n < 1 for n in v):
            raise ValueError(f"N values must be >= 1, got {v}")
        return v

    @field_validator("n_max")
    @classmethod
    def _n_max(cls, v: float | None) -> float | None:
        if v is not None and math.isfinite(v) and v < 2:
            raise ValueError(f"N_max must be >= 2, got {v}")
        return v

    @model_validator(mode="after")
    def _files_exist(self) -> ExperimentConfig:
        if self.cost_file is not None and not Path(self.cost_file).is_file():
            raise ValueError(f"cost file not found: {self.cost_file}")
        return self


def parse_experiment(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ModelConfigError(str(e)) from e


# CSV-строки с фиксированными заголовками
class PilotRow(BaseModel):
    N: int
    mean_seconds: float
    fitted_a: float
    fitted_b: float


class IreCsvRow(BaseModel):
    model_config = {"populate_by_name": True}

    lam: float = Field(alias="lambda")
    N: int
    iact_f1: float
    iact_f2: float
    asvar_f1: float
    asvar_f2: float
    sec_per_iter: float
    ire_f1: float
    ire_f2: float
    approx_loss: float


# HTTP API
class TimingPoint(BaseModel):
    n: int = Field(ge=1)
    seconds: float = Field(gt=0)


class CostFitRequest(BaseModel):
    timings: list[TimingPoint] = Field(..., min_length=1)


class CostResponse(BaseModel):
    a: float
    b: float


class CostMinimumRequest(BaseModel):
    a: float = Field(ge=0)
    b: float = Field(gt=0)
    d: float = Field(gt=0)
    w_hat: float | None = Field(default=None, gt=0)


class CostMinimumResponse(BaseModel):
    lam_min: float
    u_min: float
    lam_equiv: float
    lam_upper_bound: float | None = None


class DiscreteAnalysisRequest(BaseModel):
    model: DiscreteModelConfig
    cost_a: list[float] = Field(default_factory=lambda: [0.0, 1.0])
    grid: GridConfig = Field(default_factory=lambda: GridConfig(lo=2.0, hi=30.0, step=0.05))
    method: Literal["integral", "enumerate"] = "integral"


class MinimiserRowOut(BaseModel):
    a: float
    lambda_G: float
    lambda_H: float
    minimisers: dict[str, float]
    so_G: dict[str, float]
    so_H: dict[str, float]


class DiscreteAnalysisResponse(BaseModel):
    name: str
    w_hat: float
    minimisers: list[MinimiserRowOut]
    violations: list[str]


class AdaptProjectRequest(BaseModel):
    xi: float
    n_max: float | None = None


class AdaptProjectResponse(BaseModel):
    xi: float
    lam: float


class HealthResponse(BaseModel):
    status: str = "ok"
