"""
Synthetic temporal-drift benchmark.

Coefficients follow an autoregressive mix of the previous ``m`` periods with
sparse Bernoulli shocks; at ``perturb_time`` the vector is pulled toward a
fresh N(0, 0.5 I) draw by ``p_perturb``. Each period's data are standard normal
covariates with logistic outcomes (intercept 0).

Every random draw comes from its own sub-stream of ``config.seed``, so changing
``p_perturb`` or ``rho`` leaves every other draw untouched.
"""
import logging
import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.special import expit

from .domain import CoefficientVector, Dataset
from .errors import InvalidConfigError
from .rng import CURRENT, EVALUATION, FEATURES, HISTORICAL, OUTCOMES, PATH, PERTURBATION, SHOCKS, derive_seed, substream

log = logging.getLogger("simulator")

PERTURBATION_VARIANCE = 0.5


class DriftConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    L: int = Field(15, description="number of periods")
    p: int = Field(100, description="covariate dimension")
    p0: int = Field(30, description="zeroed coordinates per seed vector")
    m: int = Field(3, description="autoregressive order")
    # ar_weights[0] multiplies the most recent period; default uniform 1/m
    ar_weights: list[float] | None = None
    p_shock: float = 0.2
    sigma_shock: float = 1.0
    p_perturb: float = 0.0
    perturb_time: int = 8
    N: int = Field(2000, description="per-period historical sample size")
    rho: float = Field(0.2, description="current-to-historical sample size ratio")
    seed: int = 0

    @field_validator("ar_weights")
    @classmethod
    def _positive_weights(cls, v):
        if v is not None and any(not w > 0 for w in v):
            raise ValueError("ar_weights must be positive")
        return v

    @model_validator(mode="after")
    def _ranges(self):
        if self.L < 2 or self.p < 1 or self.N < 1:
            raise ValueError("need L >= 2, p >= 1, N >= 1")
        if not 0 <= self.p0 <= self.p:
            raise ValueError("p0 must lie in [0, p]")
        if not 1 <= self.m < self.L:
            raise ValueError("m must satisfy 1 <= m < L")
        if self.ar_weights is not None and len(self.ar_weights) != self.m:
            raise ValueError(f"ar_weights needs exactly m={self.m} entries")
        if not 0.0 <= self.p_shock <= 1.0:
            raise ValueError("p_shock must lie in [0, 1]")
        if not self.sigma_shock >= 0:
            raise ValueError("sigma_shock must be >= 0")
        if not 0.0 <= self.p_perturb < 1.0:
            raise ValueError("p_perturb must lie in [0, 1)")
        if not 1 <= self.perturb_time <= self.L:
            raise ValueError("perturb_time must lie in [1, L]")
        if not 0.0 < self.rho <= 1.0:
            raise ValueError("rho must lie in (0, 1]")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")
        return self

    @property
    def weights(self) -> np.ndarray:
        if self.ar_weights is None:
            return np.full(self.m, 1.0 / self.m)
        return np.asarray(self.ar_weights, dtype=float)

    @property
    def current_size(self) -> int:
        return max(1, int(round(self.rho * self.N)))


class CoefficientPath(BaseModel):
    """beta^(1..L); ``shock_mask[l-1, j]`` marks a shocked coordinate (seed periods never are)."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    betas: list[CoefficientVector]
    shock_mask: np.ndarray
    perturbation: np.ndarray

    def at(self, period: int) -> CoefficientVector:
        return self.betas[period - 1]

    @property
    def length(self) -> int:
        return len(self.betas)


class Scenario(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    path: CoefficientPath
    current_period: int
    historical: list[Dataset]
    current: Dataset
    # periods current_period..L, fresh draws; futures[0] is the same-period test set
    futures: list[Dataset]


def _seed_vectors(config: DriftConfig) -> list[np.ndarray]:
    rng = substream(config.seed, PATH)
    seeds = []
    for _ in range(config.m):
        v = rng.standard_normal(config.p)
        v[rng.choice(config.p, size=config.p0, replace=False)] = 0.0
        seeds.append(v)
    return seeds


def generate_coefficient_path(config: DriftConfig) -> CoefficientPath:
    seeds = _seed_vectors(config)
    w = config.weights
    perturbation = substream(config.seed, PATH, PERTURBATION).normal(
        0.0, math.sqrt(PERTURBATION_VARIANCE), config.p
    )
    betas: list[np.ndarray] = []
    mask = np.zeros((config.L, config.p), dtype=bool)
    for l in range(1, config.L + 1):
        if l <= config.m:
            base = seeds[l - 1].copy()
        else:
            rng = substream(config.seed, PATH, SHOCKS, l)
            v = rng.random(config.p) < config.p_shock
            shock = rng.normal(0.0, config.sigma_shock, config.p)
            ar = sum(w[k] * betas[l - 2 - k] for k in range(config.m))
            base = np.where(v, shock, ar)
            mask[l - 1] = v
        if l == config.perturb_time:
            base = (1.0 - config.p_perturb) * base + config.p_perturb * perturbation
        betas.append(base)
    log.debug("path L=%d p=%d shocks=%d p_perturb=%.2f", config.L, config.p, int(mask.sum()), config.p_perturb)
    return CoefficientPath(
        betas=[CoefficientVector(intercept=0.0, slopes=b) for b in betas],
        shock_mask=mask,
        perturbation=perturbation,
    )


def generate_dataset(beta: CoefficientVector, n: int, rng_seed: int, period_label: int | None = None,
                     origin: str | None = None) -> Dataset:
    """X ~ N(0, I), Y ~ Bernoulli(sigmoid(intercept + X beta)); X and Y use separate streams."""
    if n < 1:
        raise InvalidConfigError("dataset size must be >= 1")
    x = substream(rng_seed, FEATURES).standard_normal((n, beta.p))
    prob = expit(x @ beta.slopes + beta.intercept)
    y = (substream(rng_seed, OUTCOMES).random(n) < prob).astype(float)
    return Dataset(features=x, outcomes=y, period_label=period_label, origin=origin or f"seed:{rng_seed}")


def _period_dataset(config: DriftConfig, path: CoefficientPath, role: int, period: int, n: int) -> Dataset:
    seed = derive_seed(config.seed, role, period)
    return generate_dataset(path.at(period), n, seed, period_label=period, origin=f"{role}:{period}:{config.seed}")


def generate_period_datasets(config: DriftConfig) -> tuple[CoefficientPath, list[Dataset]]:
    """One dataset of size N for every period 1..L."""
    path = generate_coefficient_path(config)
    return path, [_period_dataset(config, path, HISTORICAL, l, config.N) for l in range(1, config.L + 1)]


def generate_scenario(config: DriftConfig, current_period: int | None = None,
                      eval_sample_size: int = 2000) -> Scenario:
    """
    Historical data (size N) for periods before ``current_period``, a current
    training set of size rho*N at ``current_period`` and fresh evaluation sets for
    every period from ``current_period`` on.
    """
    t0 = config.perturb_time - 1 if current_period is None else current_period
    if not 1 <= t0 <= config.L:
        raise InvalidConfigError(f"current period {t0} outside 1..{config.L}")
    if eval_sample_size < 1:
        raise InvalidConfigError("eval_sample_size must be >= 1")
    path = generate_coefficient_path(config)
    historical = [_period_dataset(config, path, HISTORICAL, l, config.N) for l in range(1, t0)]
    current = _period_dataset(config, path, CURRENT, t0, config.current_size)
    futures = [_period_dataset(config, path, EVALUATION, l, eval_sample_size) for l in range(t0, config.L + 1)]
    log.debug("scenario t0=%d sources=%d current_n=%d futures=%d", t0, len(historical), current.n, len(futures))
    return Scenario(path=path, current_period=t0, historical=historical, current=current, futures=futures)
