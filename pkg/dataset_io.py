"""CSV and JSON files for datasets, latent tables, fitted models and sweep results."""

import json
import logging
import re
from enum import Enum
from pathlib import Path
from typing import IO, Iterable, List, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

from errors import ParseError
from models import (
    RESULT_COLUMNS,
    CateModel,
    EvalDataset,
    ObservationalDataset,
    SimulatorDataset,
    SweepResultRow,
)

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
PathLike = Union[str, Path]

_RAGGED = re.compile(r"Expected (\d+) fields in line (\d+), saw (\d+)")


def _columns(prefix: str, d: int) -> List[str]:
    return [f"{prefix}_{j}" for j in range(d)]


def write_frame(frame: pd.DataFrame, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep="nan", lineterminator="\n")
    logger.debug("Wrote %d rows to %s", len(frame), path)
    return path


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------


def observational_frame(data: ObservationalDataset) -> pd.DataFrame:
    frame = pd.DataFrame(data.x, columns=_columns("x", data.n_x))
    frame["t"] = data.t
    frame["y"] = data.y
    return frame


def simulator_frame(data: SimulatorDataset) -> pd.DataFrame:
    frame = pd.concat(
        [
            pd.DataFrame(data.x0, columns=_columns("x0", data.n_x)),
            pd.DataFrame(data.x1, columns=_columns("x1", data.n_x)),
        ],
        axis=1,
    )
    frame["y0"] = data.y0
    frame["y1"] = data.y1
    return frame


def eval_frame(data: EvalDataset) -> pd.DataFrame:
    """Observed covariates, treatment and factual outcome, plus both potential outcomes"""
    frame = pd.DataFrame(data.x, columns=_columns("x", data.x.shape[1]))
    frame["t"] = data.t
    frame["y"] = np.where(data.t == 1, data.y1, data.y0)
    frame["y0"] = data.y0
    frame["y1"] = data.y1
    frame["tau"] = data.tau
    return frame


def write_observational_csv(data: ObservationalDataset, path: PathLike) -> Path:
    return write_frame(observational_frame(data), path)


def write_simulator_csv(data: SimulatorDataset, path: PathLike) -> Path:
    return write_frame(simulator_frame(data), path)


def write_eval_csv(data: EvalDataset, path: PathLike) -> Path:
    return write_frame(eval_frame(data), path)


def read_numeric_csv(path: Union[PathLike, IO]) -> pd.DataFrame:
    """
    Parse a rectangular numeric CSV with a header row from a path or an open buffer.

    Rows are reported 1-based counting the header as row 0; columns by name.
    """
    if hasattr(path, "read"):
        name = getattr(path, "name", "upload")
    else:
        path = Path(path)
        name = str(path)
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    except FileNotFoundError:
        raise ParseError(f"file not found: {name}")
    except pd.errors.EmptyDataError:
        raise ParseError(f"{name} is empty")
    except pd.errors.ParserError as exc:
        match = _RAGGED.search(str(exc))
        if match:
            expected, line, saw = (int(g) for g in match.groups())
            raise ParseError(
                f"{name}: row has {saw} fields, header has {expected}", row=line - 1
            )
        raise ParseError(f"{name}: {exc}")

    if raw.shape[0] == 0:
        raise ParseError(f"{name} has a header but no data rows")
    # short rows come back padded with NaN
    short = raw.isna().any(axis=1).to_numpy()
    if short.any():
        row = int(np.flatnonzero(short)[0]) + 1
        raise ParseError(f"{name}: row has fewer fields than the header", row=row)

    values = {}
    for column in raw.columns:
        cells = raw[column].to_numpy()
        parsed = np.empty(cells.shape[0])
        for i, cell in enumerate(cells):
            try:
                parsed[i] = float(cell)
            except ValueError:
                raise ParseError(f"{name}: non-numeric cell {cell!r}", row=i + 1, column=str(column))
            if not np.isfinite(parsed[i]):
                raise ParseError(f"{name}: non-finite cell {cell!r}", row=i + 1, column=str(column))
        values[column] = parsed
    return pd.DataFrame(values, columns=raw.columns)


def _block(frame: pd.DataFrame, prefix: str) -> np.ndarray:
    columns = [c for c in frame.columns if re.fullmatch(rf"{prefix}_\d+", c)]
    if not columns:
        raise ParseError(f"no {prefix}_* columns found")
    columns.sort(key=lambda c: int(c.rsplit("_", 1)[1]))
    return frame[columns].to_numpy()


def _require(frame: pd.DataFrame, *names: str) -> None:
    missing = [n for n in names if n not in frame.columns]
    if missing:
        raise ParseError(f"missing columns: {', '.join(missing)}")


def read_observational_csv(path: PathLike) -> ObservationalDataset:
    frame = read_numeric_csv(path)
    _require(frame, "t", "y")
    try:
        return ObservationalDataset(x=_block(frame, "x"), t=frame["t"].to_numpy(), y=frame["y"].to_numpy())
    except ValidationError as exc:
        raise ParseError(f"{path}: {exc.errors()[0]['msg']}")


def read_simulator_csv(path: PathLike) -> SimulatorDataset:
    frame = read_numeric_csv(path)
    _require(frame, "y0", "y1")
    try:
        return SimulatorDataset(
            x0=_block(frame, "x0"), x1=_block(frame, "x1"), y0=frame["y0"].to_numpy(), y1=frame["y1"].to_numpy()
        )
    except ValidationError as exc:
        raise ParseError(f"{path}: {exc.errors()[0]['msg']}")


def read_eval_csv(path: PathLike) -> EvalDataset:
    frame = read_numeric_csv(path)
    _require(frame, "t", "y0", "y1", "tau")
    y0, y1 = frame["y0"].to_numpy(), frame["y1"].to_numpy()
    try:
        return EvalDataset(x=_block(frame, "x"), t=frame["t"].to_numpy(), y0=y0, y1=y1, tau=y1 - y0)
    except ValidationError as exc:
        raise ParseError(f"{path}: {exc.errors()[0]['msg']}")


# ---------------------------------------------------------------------------
# Latents
# ---------------------------------------------------------------------------


def write_latents_csv(z: np.ndarray, path: PathLike, columns: Iterable[str] = None) -> Path:
    z = np.asarray(z, dtype=float)
    names = list(columns) if columns is not None else _columns("z", z.shape[1])
    return write_frame(pd.DataFrame(z, columns=names), path)


def load_latents_csv(path: PathLike) -> np.ndarray:
    """m x n_z latent matrix from a numeric CSV with a header"""
    frame = read_numeric_csv(path)
    logger.info("Loaded %d latent rows with %d columns from %s", frame.shape[0], frame.shape[1], path)
    return frame.to_numpy(dtype=float)


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------


def write_model_json(model: CateModel, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(model.model_dump_json(indent=2))
    return path


def parse_model_json(text: Union[str, bytes]) -> CateModel:
    try:
        return CateModel.model_validate_json(text)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(p) for p in first["loc"])
        raise ParseError(f"invalid model document at '{where}': {first['msg']}")


def read_model_json(path: PathLike) -> CateModel:
    path = Path(path)
    if not path.exists():
        raise ParseError(f"file not found: {path}")
    return parse_model_json(path.read_text())


def write_json(payload: dict, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))
    return path


# ---------------------------------------------------------------------------
# Sweep results
# ---------------------------------------------------------------------------


def results_frame(rows: List[SweepResultRow]) -> pd.DataFrame:
    records = []
    for row in rows:
        record = row.model_dump()
        records.append({k: (v.value if isinstance(v, Enum) else v) for k, v in record.items()})
    return pd.DataFrame(records, columns=RESULT_COLUMNS)


def write_results_csv(rows: List[SweepResultRow], path: PathLike) -> Path:
    """Result rows in the canonical column order, floats at 17 significant digits"""
    if not rows:
        raise ValueError("no result rows to write")
    return write_frame(results_frame(rows), path)


def read_results_csv(path: PathLike) -> List[SweepResultRow]:
    path = Path(path)
    try:
        frame = pd.read_csv(
            path,
            keep_default_na=False,
            na_values=["nan"],
            dtype={"error": str, "status": str},
            float_precision="round_trip",
        )
    except FileNotFoundError:
        raise ParseError(f"file not found: {path}")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise ParseError(f"{path}: {exc}")
    missing = [c for c in RESULT_COLUMNS if c not in frame.columns]
    if missing:
        raise ParseError(f"{path}: missing result columns {', '.join(missing)}")
    rows = []
    for i, record in enumerate(frame[RESULT_COLUMNS].to_dict(orient="records")):
        record["error"] = "" if pd.isna(record["error"]) else str(record["error"])
        try:
            rows.append(SweepResultRow(**record))
        except ValidationError as exc:
            raise ParseError(f"{path}: {exc.errors()[0]['msg']}", row=i + 1)
    return rows
