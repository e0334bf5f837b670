"""Plot-ready output files: fixed-header CSV tables, JSON-lines traces, cost files, and their readers."""
from __future__ import annotations

import csv
import json
import logging
import math
from collections.abc import Iterable, Sequence
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ValidationError

from app.schemas import CostSpec, IreCsvRow, ModelConfigError, PilotRow
from app.services.adapt_service import AffineCost

logger = logging.getLogger(__name__)

PILOT_HEADER = ["N", "mean_seconds", "fitted_a", "fitted_b"]
IRE_HEADER = [
    "lambda", "N", "iact_f1", "iact_f2", "asvar_f1", "asvar_f2",
    "sec_per_iter", "ire_f1", "ire_f2", "approx_loss",
]
LAMBDA_TRACE_HEADER = ["k", "xi", "lambda"]
TIMING_COLUMNS = frozenset({"mean_seconds", "sec_per_iter", "ire_f1", "ire_f2", "approx_loss", "seconds"})


def minimiser_header(names: Sequence[str]) -> list[str]:
    cols = ["a", "lambda_G", "lambda_H"]
    for name in names:
        cols += [f"lambda_{name}", f"SO_G_{name}", f"SO_H_{name}"]
    return cols


def _cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        return repr(v)
    return "" if value is None else str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[dict]) -> Path:
    """Header is fixed by the caller; rows with unknown keys are rejected."""
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(header), extrasaction="raise", lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _cell(v) for k, v in row.items()})
            count += 1
    logger.info("wrote %s (%d rows)", path, count)
    return path


def read_csv(path: Path, header: Sequence[str] | None = None) -> list[dict[str, str]]:
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        found = reader.fieldnames or []
        if header is not None and list(found) != list(header):
            raise ModelConfigError(f"{path}: header {found} does not match expected {list(header)}")
        return list(reader)


def read_rows(path: Path, header: Sequence[str], schema: type[BaseModel]) -> list[BaseModel]:
    rows = read_csv(path, header)
    try:
        return [schema.model_validate(r) for r in rows]
    except ValidationError as e:
        raise ModelConfigError(f"{path}: {e}") from e


def read_pilot_rows(path: Path) -> list[PilotRow]:
    return read_rows(path, PILOT_HEADER, PilotRow)


def read_ire_rows(path: Path) -> list[IreCsvRow]:
    return read_rows(path, IRE_HEADER, IreCsvRow)


def table_csv_rows(columns: dict[str, np.ndarray]) -> Iterable[dict]:
    names = list(columns)
    stacked = np.column_stack([np.asarray(columns[n], dtype=float) for n in names])
    for values in stacked:
        yield dict(zip(names, values))


def write_jsonl(path: Path, rows: Iterable[dict]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, ensure_ascii=False) + "\n")
    return path


def read_jsonl(path: Path) -> list[dict]:
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def write_json(path: Path, obj: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
    return path


def write_cost_file(path: Path, cost: AffineCost) -> Path:
    return write_json(path, CostSpec(a=cost.a, b=cost.b).model_dump())


def read_cost_file(path: Path) -> AffineCost:
    try:
        spec = CostSpec.model_validate(json.loads(Path(path).read_text(encoding="utf-8")))
    except (ValidationError, json.JSONDecodeError) as e:
        raise ModelConfigError(f"{path}: {e}") from e
    return AffineCost(spec.a, spec.b)
