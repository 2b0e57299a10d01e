from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.special import expit

from .errors import DimensionMismatchError


SIMPLEX_TOL = 1e-10


class LinkFunction(str, Enum):
    LOGISTIC = "logistic"
    IDENTITY = "identity"

    def mean(self, eta: np.ndarray) -> np.ndarray:
        """Inverse link g^{-1}(eta)."""
        if self is LinkFunction.LOGISTIC:
            return expit(eta)
        return np.asarray(eta, dtype=float)


class Dataset(BaseModel):
    """Design matrix with paired outcomes for one time period."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    features: np.ndarray
    outcomes: np.ndarray
    period_label: int | None = None
    # where the rows came from (stream tag); used by the harness leak audit
    origin: str | None = None

    @field_validator("features", mode="before")
    @classmethod
    def _matrix(cls, v):
        arr = np.array(v, dtype=float)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        if arr.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        arr.setflags(write=False)
        return arr

    @field_validator("outcomes", mode="before")
    @classmethod
    def _vector(cls, v):
        arr = np.array(v, dtype=float).reshape(-1)
        arr.setflags(write=False)
        return arr

    @model_validator(mode="after")
    def _shapes(self):
        n, p = self.features.shape
        if n < 1 or p < 1:
            raise ValueError("dataset needs n >= 1 rows and p >= 1 columns")
        if self.outcomes.shape[0] != n:
            raise ValueError(f"outcomes length {self.outcomes.shape[0]} != feature rows {n}")
        if not (np.all(np.isfinite(self.features)) and np.all(np.isfinite(self.outcomes))):
            raise ValueError("dataset contains NaN or infinite values")
        return self

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    def is_binary(self) -> bool:
        return bool(np.all((self.outcomes == 0.0) | (self.outcomes == 1.0)))

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        return Dataset(
            features=self.features[idx],
            outcomes=self.outcomes[idx],
            period_label=self.period_label,
            origin=self.origin,
        )


class CoefficientVector(BaseModel):
    """Intercept plus p slopes."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    intercept: float
    slopes: np.ndarray

    @field_validator("slopes", mode="before")
    @classmethod
    def _as_vector(cls, v):
        arr = np.array(v, dtype=float).reshape(-1)
        if arr.size < 1:
            raise ValueError("slopes must have at least one entry")
        arr.setflags(write=False)
        return arr

    @model_validator(mode="after")
    def _finite(self):
        if not (np.isfinite(self.intercept) and np.all(np.isfinite(self.slopes))):
            raise ValueError("coefficients must be finite")
        return self

    @property
    def p(self) -> int:
        return self.slopes.shape[0]

    def as_array(self) -> np.ndarray:
        """(intercept, slopes) stacked into one length-(p+1) vector."""
        return np.concatenate(([self.intercept], self.slopes))

    @classmethod
    def from_array(cls, arr) -> "CoefficientVector":
        arr = np.asarray(arr, dtype=float).reshape(-1)
        return cls(intercept=float(arr[0]), slopes=arr[1:])

    @classmethod
    def zeros(cls, p: int) -> "CoefficientVector":
        return cls(intercept=0.0, slopes=np.zeros(p))

    def to_json_dict(self, link: LinkFunction) -> dict:
        return {
            "intercept": float(self.intercept),
            "slopes": [float(s) for s in self.slopes],
            "link": LinkFunction(link).value,
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> tuple["CoefficientVector", LinkFunction]:
        beta = cls(intercept=payload["intercept"], slopes=payload["slopes"])
        return beta, LinkFunction(payload.get("link", LinkFunction.LOGISTIC.value))


class PenaltyConfig(BaseModel):
    """Elastic-net penalty lambda * [mixing*|b|_1 + (1-mixing)/2*|b|_2^2] on the slopes."""
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    lambda_: float = Field(..., alias="lambda", description="Regularization strength (>= 0)")
    mixing: float = Field(1.0, description="1 = pure l1, 0 = pure l2")
    standardize: bool = True

    @field_validator("lambda_")
    @classmethod
    def _non_negative(cls, v):
        if not v >= 0:
            raise ValueError("lambda must be >= 0")
        return float(v)

    @field_validator("mixing")
    @classmethod
    def _unit_interval(cls, v):
        if not 0.0 <= v <= 1.0:
            raise ValueError("mixing must be in [0, 1]")
        return float(v)


class PenaltyPolicy(BaseModel):
    """How every fit picks its penalty: cross-validated lambda on a shared grid."""
    model_config = ConfigDict(frozen=True)

    folds: int = 5
    grid_size: int = 30
    mixing: float = 1.0
    standardize: bool = True

    @field_validator("folds")
    @classmethod
    def _folds(cls, v):
        if v < 2:
            raise ValueError("folds must be >= 2")
        return v

    @field_validator("grid_size")
    @classmethod
    def _grid(cls, v):
        if v < 1:
            raise ValueError("grid_size must be >= 1")
        return v

    @field_validator("mixing")
    @classmethod
    def _mixing(cls, v):
        if not 0.0 <= v <= 1.0:
            raise ValueError("mixing must be in [0, 1]")
        return float(v)


class ModelBank(BaseModel):
    """
    Column-stacked candidate coefficient vectors.

    Column order is fixed: when ``has_target`` is set the first column is the
    current-target estimate, followed by the sources in ascending period order.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    columns: list[CoefficientVector]
    labels: list[int]
    has_target: bool = False

    @model_validator(mode="after")
    def _consistent(self):
        if not self.columns:
            raise ValueError("model bank needs at least one column")
        dims = {c.p for c in self.columns}
        if len(dims) != 1:
            raise ValueError(f"bank columns disagree on dimension: {sorted(dims)}")
        if len(self.labels) != len(self.columns):
            raise ValueError("one label per bank column is required")
        return self

    @property
    def width(self) -> int:
        return len(self.columns)

    @property
    def p(self) -> int:
        return self.columns[0].p

    @property
    def matrix(self) -> np.ndarray:
        """(p+1) x K matrix B with one coefficient vector per column."""
        return np.column_stack([c.as_array() for c in self.columns])

    def with_target(self, target: CoefficientVector, label: int | None = None) -> "ModelBank":
        """Source bank with the current-target estimate prepended as column 0."""
        if self.has_target:
            raise ValueError("bank already holds a target column")
        return ModelBank(columns=[target] + list(self.columns),
                         labels=[label if label is not None else 0] + list(self.labels), has_target=True)

    def to_json_dict(self, link: LinkFunction) -> dict:
        return {
            "columns": [c.to_json_dict(link) for c in self.columns],
            "labels": list(self.labels),
            "has_target": self.has_target,
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "ModelBank":
        cols = [CoefficientVector.from_json_dict(c)[0] for c in payload["columns"]]
        return cls(columns=cols, labels=payload["labels"], has_target=payload.get("has_target", False))


class SimplexWeights(BaseModel):
    """Aggregation weights on the probability simplex."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    gamma: np.ndarray

    @field_validator("gamma", mode="before")
    @classmethod
    def _on_simplex(cls, v):
        arr = np.array(v, dtype=float).reshape(-1)
        if arr.size < 1:
            raise ValueError("weights must be non-empty")
        if np.any(arr < 0):
            raise ValueError("weights must be non-negative")
        if abs(arr.sum() - 1.0) > SIMPLEX_TOL:
            raise ValueError(f"weights must sum to 1 (got {arr.sum():.12g})")
        arr.setflags(write=False)
        return arr

    @property
    def size(self) -> int:
        return self.gamma.shape[0]

    @classmethod
    def vertex(cls, k: int, size: int) -> "SimplexWeights":
        e = np.zeros(size)
        e[k] = 1.0
        return cls(gamma=e)

    @classmethod
    def uniform(cls, size: int) -> "SimplexWeights":
        return cls(gamma=np.full(size, 1.0 / size))


def check_dimensions(beta: CoefficientVector, data: Dataset) -> None:
    if beta.p != data.p:
        raise DimensionMismatchError(f"coefficients have p={beta.p} but data has p={data.p}")
