"""CSV / JSON persistence for datasets, models, diagnostics, configs and results."""
import json
import logging
import os

import numpy as np
import pandas as pd
from pydantic import BaseModel, ValidationError

from .domain import CoefficientVector, Dataset, LinkFunction, ModelBank
from .errors import DataIOError, InvalidConfigError, InvalidDataError
from .metrics import AucTable

log = logging.getLogger("repo")

AUC_COLUMNS = ("method", "train_period", "eval_period", "rep", "auc")


def _ensure_parent_dir(path: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)


def first_validation_message(exc: ValidationError) -> str:
    """Summarize the first validation error as 'loc: msg'."""
    try:
        err = exc.errors()[0]
        loc = ".".join(str(x) for x in err.get("loc", []))
        detail = err.get("msg", "")
        return f"{loc}: {detail}" if loc else (detail or "invalid value")
    except Exception:
        return str(exc)


# ---------- json ----------

def write_json(payload, path: str) -> None:
    try:
        _ensure_parent_dir(path)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(payload, indent=2, sort_keys=True))
            fh.write("\n")
    except OSError as e:
        raise DataIOError(f"cannot write {path}: {e}") from e


def read_json(path: str):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise DataIOError(f"cannot read {path}: {e}") from e
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise InvalidConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from e


def load_config(path: str, model_cls: type[BaseModel]) -> BaseModel:
    """Parse a JSON config file into ``model_cls``; omitted fields take defaults."""
    payload = read_json(path)
    if not isinstance(payload, dict):
        raise InvalidConfigError(f"{path}: top-level JSON value must be an object")
    try:
        return model_cls.model_validate(payload)
    except ValidationError as e:
        raise InvalidConfigError(f"{path}: {first_validation_message(e)}") from e


def write_coefficients(beta: CoefficientVector, link: LinkFunction, path: str) -> None:
    write_json(beta.to_json_dict(link), path)


def read_coefficients(path: str) -> tuple[CoefficientVector, LinkFunction]:
    payload = read_json(path)
    try:
        return CoefficientVector.from_json_dict(payload)
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidDataError(f"{path}: not a coefficient vector ({e})") from e


def write_bank(bank: ModelBank, link: LinkFunction, path: str) -> None:
    write_json(bank.to_json_dict(link), path)


def read_bank(path: str) -> ModelBank:
    payload = read_json(path)
    try:
        return ModelBank.from_json_dict(payload)
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidDataError(f"{path}: not a model bank ({e})") from e


# ---------- csv ----------

def read_dataset_csv(path: str) -> Dataset:
    """Header 'y,x1,...,xp' with an optional trailing 'period' column."""
    try:
        frame = pd.read_csv(path, encoding="utf-8", float_precision="round_trip")
    except (OSError, UnicodeDecodeError) as e:
        raise DataIOError(f"cannot read {path}: {e}") from e
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise InvalidDataError(f"{path}: malformed CSV ({e})") from e

    columns = list(frame.columns)
    if not columns or columns[0] != "y":
        raise InvalidDataError(f"{path}: first column must be named 'y'")
    feature_cols = [c for c in columns[1:] if c != "period"]
    expected = [f"x{j}" for j in range(1, len(feature_cols) + 1)]
    if feature_cols != expected:
        raise InvalidDataError(f"{path}: feature columns must be x1..xp in order")

    period = None
    if "period" in columns:
        values = frame["period"].unique()
        if values.size == 1:
            period = int(values[0])
    try:
        data = Dataset(
            features=frame[feature_cols].to_numpy(dtype=float),
            outcomes=frame["y"].to_numpy(dtype=float),
            period_label=period,
            origin=f"file:{os.path.abspath(path)}",
        )
    except (ValidationError, ValueError) as e:
        raise InvalidDataError(f"{path}: {e}") from e
    log.info("read dataset %s n=%d p=%d period=%s", path, data.n, data.p, period)
    return data


def write_dataset_csv(data: Dataset, path: str, include_period: bool = False) -> None:
    frame = pd.DataFrame(data.features, columns=[f"x{j}" for j in range(1, data.p + 1)])
    frame.insert(0, "y", data.outcomes)
    if include_period:
        frame["period"] = data.period_label if data.period_label is not None else 0
    write_frame(frame, path)


def write_frame(frame: pd.DataFrame, path: str) -> None:
    try:
        _ensure_parent_dir(path)
        frame.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
    except OSError as e:
        raise DataIOError(f"cannot write {path}: {e}") from e


def read_frame(path: str) -> pd.DataFrame:
    try:
        return pd.read_csv(path, encoding="utf-8", float_precision="round_trip")
    except OSError as e:
        raise DataIOError(f"cannot read {path}: {e}") from e
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise InvalidDataError(f"{path}: malformed CSV ({e})") from e


def _single_value(frame: pd.DataFrame, column: str, wanted, path: str) -> pd.DataFrame:
    if column not in frame.columns:
        return frame
    if wanted is not None:
        return frame[np.isclose(frame[column].astype(float), float(wanted))]
    if frame[column].nunique() > 1:
        raise InvalidConfigError(f"{path}: several values of '{column}' present; select one")
    return frame


def read_auc_table(path: str, method: str | None = None, rho: float | None = None,
                   p_perturb: float | None = None) -> AucTable:
    """Load per-rep AUC rows and average them into a train x eval table."""
    frame = read_frame(path)
    missing = [c for c in AUC_COLUMNS if c not in frame.columns]
    if missing:
        raise InvalidDataError(f"{path}: missing columns {missing}")
    if method is not None:
        frame = frame[frame["method"] == method]
    elif frame["method"].nunique() > 1:
        raise InvalidConfigError(f"{path}: several methods present; select one")
    frame = _single_value(frame, "rho", rho, path)
    frame = _single_value(frame, "p_perturb", p_perturb, path)
    if frame.empty:
        raise InvalidDataError(f"{path}: no rows left after filtering")
    records = zip(frame["train_period"], frame["eval_period"], frame["auc"])
    return AucTable.from_records(records)
