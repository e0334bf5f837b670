"""WDBC (breast cancer Wisconsin diagnostic) CSV ingestion.

Rows are `id,diagnosis,30 floats`; M -> 1, B -> 0. Covariates are standardised
to zero mean, unit variance and an intercept column is prepended.
"""
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from app.config import settings
from app.schemas import ModelConfigError

logger = logging.getLogger(__name__)

WDBC_ROWS = 569
WDBC_COVARIATES = 30
DIAGNOSIS_CODES = {"M": 1.0, "B": 0.0}


@dataclass(frozen=True)
class WdbcData:
    design: np.ndarray  # (n_obs, 31), column 0 = intercept
    labels: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    source: str

    def metadata(self) -> dict:
        return {
            "source": self.source,
            "n_obs": int(self.labels.shape[0]),
            "n_covariates": int(self.means.shape[0]),
            "standardised": True,
            "intercept": True,
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
        }


def load_wdbc(path: Path | str | None = None, expected_rows: int | None = WDBC_ROWS) -> WdbcData:
    path = Path(path) if path is not None else settings.get_data_path()
    if not path.is_file():
        raise FileNotFoundError(f"WDBC file not found: {path} (set ISIR_DATA_DIR)")
    raw = np.loadtxt(path, delimiter=",", dtype=str, ndmin=2)
    if raw.shape[1] != WDBC_COVARIATES + 2:
        raise ModelConfigError(
            f"{path}: expected {WDBC_COVARIATES + 2} columns (id, diagnosis, {WDBC_COVARIATES} covariates), got {raw.shape[1]}"
        )
    if expected_rows is not None and raw.shape[0] != expected_rows:
        raise ModelConfigError(f"{path}: expected {expected_rows} rows, got {raw.shape[0]}")
    codes = np.char.strip(raw[:, 1])
    unknown = sorted(set(codes.tolist()) - DIAGNOSIS_CODES.keys())
    if unknown:
        raise ModelConfigError(f"{path}: unknown diagnosis codes {unknown}")
    labels = np.array([DIAGNOSIS_CODES[c] for c in codes])
    try:
        covariates = raw[:, 2:].astype(float)
    except ValueError as e:
        raise ModelConfigError(f"{path}: non-numeric covariate: {e}") from e
    if not np.all(np.isfinite(covariates)):
        raise ModelConfigError(f"{path}: non-finite covariate values")

    means = covariates.mean(axis=0)
    stds = covariates.std(axis=0)
    if np.any(stds == 0):
        raise ModelConfigError(f"{path}: constant covariate column(s) {np.flatnonzero(stds == 0).tolist()}")
    z = (covariates - means) / stds
    design = np.hstack([np.ones((z.shape[0], 1)), z])
    logger.info("WDBC loaded: %d rows, %d malignant", labels.shape[0], int(labels.sum()))
    return WdbcData(design=design, labels=labels, means=means, stds=stds, source=str(path))
