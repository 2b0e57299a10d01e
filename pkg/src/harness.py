"""
Experiment orchestration: baseline estimators, the estimator registry, the
rho / perturbation sweeps over the synthetic drift benchmark and result
summaries.

A sweep is a list of independent cells keyed by (rho index, perturbation index,
train period index, rep). Each cell draws its scenario from the rep's stream and
its fitting seed from the full key, so results do not depend on which worker ran
which cell or in what order.
"""
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Protocol

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from . import repo
from .adapt import AdaptResult, fit_adapt, fit_sources, maximin_estimate
from .domain import CoefficientVector, Dataset, LinkFunction, PenaltyPolicy
from .errors import AdaptError, InvalidConfigError
from .glm import fit_with_policy, hessian, predict_scores
from .metrics import auc
from .rng import CURRENT, FIT, derive_seed
from .sampling import concat_datasets, downsample_controls, split_target
from .simulator import DriftConfig, generate_scenario

log = logging.getLogger("harness")

RESULT_COLUMNS = ["method", "train_period", "eval_period", "rho", "p_perturb", "rep", "auc",
                  "train_regime", "eval_regime"]
FAILURE_COLUMNS = ["cell", "method", "rho", "p_perturb", "train_period", "rep", "error"]

__all__ = [
    "split_target", "downsample_controls", "fit_target_only", "fit_pooled", "fit_maximin",
    "register_estimator", "ESTIMATORS", "ExperimentConfig", "ResultRow", "run_rho_sweep",
    "run_perturb_sweep", "run_sweep",
]


# ---------- estimators ----------

class Estimator(Protocol):
    def __call__(self, sources: list[Dataset], target: Dataset, link: LinkFunction,
                 policy: PenaltyPolicy, seed: int) -> CoefficientVector | AdaptResult: ...


ESTIMATORS: dict[str, Estimator] = {}


def register_estimator(name: str):
    """Make an estimator available to sweeps under ``name``."""
    def deco(fn: Estimator) -> Estimator:
        ESTIMATORS[name] = fn
        return fn
    return deco


def fit_target_only(target_train: Dataset, link: LinkFunction, penalty_policy: PenaltyPolicy,
                    seed: int = 0) -> CoefficientVector:
    return fit_with_policy(target_train, link, penalty_policy, derive_seed(seed, FIT, CURRENT))


def fit_pooled(sources: list[Dataset], target_train: Dataset, link: LinkFunction,
               penalty_policy: PenaltyPolicy, seed: int = 0) -> CoefficientVector:
    pooled = concat_datasets(list(sources) + [target_train], period_label=target_train.period_label)
    log.debug("pooled n=%d from %d sources", pooled.n, len(sources))
    return fit_with_policy(pooled, link, penalty_policy, derive_seed(seed, FIT, CURRENT))


def fit_maximin(sources: list[Dataset], target_train: Dataset, link: LinkFunction,
                penalty_policy: PenaltyPolicy, seed: int = 0, include_target: bool = False) -> CoefficientVector:
    """
    Maximin aggregation of the source fits, quadratic form taken at the null
    (zero) model on the current-target covariates.
    """
    bank = fit_sources(sources, link, penalty_policy, seed)
    if include_target:
        bank = bank.with_target(fit_target_only(target_train, link, penalty_policy, seed), target_train.period_label)
    hess = hessian(CoefficientVector.zeros(target_train.p), target_train, link)
    beta, _ = maximin_estimate(bank, hess)
    return beta


@register_estimator("adapt")
def _adapt(sources, target, link, policy, seed):
    return fit_adapt(sources, target, link, split_seed=seed, penalty_policy=policy)


@register_estimator("target_only")
def _target_only(sources, target, link, policy, seed):
    return fit_target_only(target, link, policy, seed)


@register_estimator("pooled")
def _pooled(sources, target, link, policy, seed):
    return fit_pooled(sources, target, link, policy, seed)


@register_estimator("maximin")
def _maximin(sources, target, link, policy, seed):
    return fit_maximin(sources, target, link, policy, seed)


# ---------- configuration / rows ----------

class ExperimentConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    drift: DriftConfig = DriftConfig()
    methods: list[str] = ["adapt", "target_only", "pooled", "maximin"]
    rho_grid: list[float] = [0.1, 0.2, 0.5, 1.0]
    perturb_grid: list[float] = [0.0, 0.3, 0.6, 0.9]
    repetitions: int = 20
    current_period: int = 7
    train_periods: list[int] | None = None
    eval_sample_size: int = 2000
    # rho held fixed while the perturbation level varies
    fixed_rho: float = 0.2
    seed: int = 0
    penalty: PenaltyPolicy = PenaltyPolicy()

    @field_validator("methods")
    @classmethod
    def _known_methods(cls, v):
        if not v:
            raise ValueError("at least one method is required")
        unknown = [m for m in v if m not in ESTIMATORS]
        if unknown:
            raise ValueError(f"unknown methods {unknown}; registered: {sorted(ESTIMATORS)}")
        if len(set(v)) != len(v):
            raise ValueError("methods must be distinct")
        return v

    @model_validator(mode="after")
    def _ranges(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if not self.rho_grid or not self.perturb_grid:
            raise ValueError("rho_grid and perturb_grid must be non-empty")
        if any(not 0.0 < r <= 1.0 for r in self.rho_grid + [self.fixed_rho]):
            raise ValueError("every rho must lie in (0, 1]")
        if any(not 0.0 <= q < 1.0 for q in self.perturb_grid):
            raise ValueError("every perturbation level must lie in [0, 1)")
        if self.eval_sample_size < 1:
            raise ValueError("eval_sample_size must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")
        for t in self.periods:
            if not 2 <= t <= self.drift.L:
                raise ValueError(f"train period {t} must lie in [2, L={self.drift.L}]")
        return self

    @property
    def periods(self) -> list[int]:
        return list(self.train_periods) if self.train_periods else [self.current_period]


class ResultRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    method: str
    train_period: int
    eval_period: int
    rho: float
    p_perturb: float
    rep: int
    auc: float
    train_regime: str
    eval_regime: str

    @field_validator("auc")
    @classmethod
    def _unit(cls, v):
        if not 0.0 <= v <= 1.0:
            raise ValueError("auc must lie in [0, 1]")
        return v


class CellFailure(BaseModel):
    model_config = ConfigDict(frozen=True)

    cell: str
    method: str
    rho: float
    p_perturb: float
    train_period: int
    rep: int
    error: str


class CellTask(BaseModel):
    model_config = ConfigDict(frozen=True)

    config: ExperimentConfig
    rho_index: int
    perturb_index: int
    train_index: int
    rep: int
    rho: float
    p_perturb: float
    train_period: int
    artifacts_dir: str | None = None

    @property
    def key(self) -> str:
        return f"rho{self.rho_index:02d}_pert{self.perturb_index:02d}_train{self.train_index:02d}_rep{self.rep:03d}"

    @property
    def fit_seed(self) -> int:
        return derive_seed(self.config.seed, self.rho_index, self.perturb_index, self.train_index, self.rep)

    @property
    def scenario_seed(self) -> int:
        # shared by every cell of one rep: only rho / p_perturb differ between them
        return derive_seed(self.config.seed, self.rep)


class CellOutcome(BaseModel):
    model_config = ConfigDict(frozen=True)

    rows: list[ResultRow]
    failures: list[CellFailure]


class SweepOutcome(BaseModel):
    model_config = ConfigDict(frozen=True)

    sweep: str
    rows: list[ResultRow]
    failures: list[CellFailure]


def regime(period: int, perturb_time: int) -> str:
    return "pre" if period < perturb_time else "post"


# ---------- cells ----------

def _audit_no_leak(method: str, fitted: list[Dataset], evaluated: list[Dataset]) -> None:
    seen = {d.origin for d in fitted if d.origin}
    leaked = [d.origin for d in evaluated if d.origin in seen]
    assert not leaked, f"{method} was evaluated on data it was fitted on: {leaked}"


def _unpack(out) -> tuple[CoefficientVector, dict | None]:
    if isinstance(out, AdaptResult):
        return out.beta, out.diagnostics.model_dump()
    return out, None


def _load_cell(cell_dir: str) -> CellOutcome | None:
    rows_path = os.path.join(cell_dir, "rows.csv")
    if not os.path.exists(rows_path):
        return None
    frame = repo.read_frame(rows_path)
    rows = [ResultRow(**rec) for rec in frame.to_dict(orient="records")] if not frame.empty else []
    failures_path = os.path.join(cell_dir, "failures.json")
    failures = [CellFailure(**f) for f in repo.read_json(failures_path)] if os.path.exists(failures_path) else []
    log.info("cell %s already complete, reusing %d rows", os.path.basename(cell_dir), len(rows))
    return CellOutcome(rows=rows, failures=failures)


def run_cell(task: CellTask) -> CellOutcome:
    config = task.config
    cell_dir = os.path.join(task.artifacts_dir, "cells", task.key) if task.artifacts_dir else None
    if cell_dir:
        done = _load_cell(cell_dir)
        if done is not None:
            return done

    drift = config.drift.model_copy(update={"rho": task.rho, "p_perturb": task.p_perturb, "seed": task.scenario_seed})
    scenario = generate_scenario(drift, task.train_period, config.eval_sample_size)
    link = LinkFunction.LOGISTIC
    rows: list[ResultRow] = []
    failures: list[CellFailure] = []
    score_frames: list[pd.DataFrame] = []
    perturb_time = config.drift.perturb_time

    for method in config.methods:
        try:
            out = ESTIMATORS[method](scenario.historical, scenario.current, link, config.penalty, task.fit_seed)
            beta, diagnostics = _unpack(out)
            if log.isEnabledFor(logging.DEBUG):
                _audit_no_leak(method, scenario.historical + [scenario.current], scenario.futures)
            method_rows = []
            for eval_data in scenario.futures:
                scores = predict_scores(beta, eval_data, link)
                method_rows.append(ResultRow(
                    method=method, train_period=task.train_period, eval_period=eval_data.period_label,
                    rho=task.rho, p_perturb=task.p_perturb, rep=task.rep,
                    auc=auc(scores, eval_data.outcomes),
                    train_regime=regime(task.train_period, perturb_time),
                    eval_regime=regime(eval_data.period_label, perturb_time),
                ))
                score_frames.append(pd.DataFrame({
                    "method": method, "eval_period": eval_data.period_label,
                    "label": eval_data.outcomes, "score": scores,
                }))
            rows.extend(method_rows)
            if cell_dir:
                repo.write_coefficients(beta, link, os.path.join(cell_dir, f"{method}.json"))
                if diagnostics is not None:
                    repo.write_json(diagnostics, os.path.join(cell_dir, f"{method}.diagnostics.json"))
        except (AdaptError, ValueError, np.linalg.LinAlgError) as exc:
            log.warning("cell %s method=%s failed: %s", task.key, method, exc)
            failures.append(CellFailure(
                cell=task.key, method=method, rho=task.rho, p_perturb=task.p_perturb,
                train_period=task.train_period, rep=task.rep, error=f"{type(exc).__name__}: {exc}",
            ))

    if cell_dir:
        if score_frames:
            repo.write_frame(pd.concat(score_frames, ignore_index=True), os.path.join(cell_dir, "scores.csv"))
        repo.write_json([f.model_dump() for f in failures], os.path.join(cell_dir, "failures.json"))
        # rows.csv last: its presence marks the cell complete
        repo.write_frame(rows_frame(rows), os.path.join(cell_dir, "rows.csv"))
    log.info("cell %s rows=%d failures=%d", task.key, len(rows), len(failures))
    return CellOutcome(rows=rows, failures=failures)


def build_tasks(config: ExperimentConfig, sweep: str, artifacts_dir: str | None = None) -> list[CellTask]:
    if sweep == "rho":
        settings = [(ri, 0, rho, config.drift.p_perturb) for ri, rho in enumerate(config.rho_grid)]
    elif sweep == "perturb":
        settings = [(0, pi, config.fixed_rho, q) for pi, q in enumerate(config.perturb_grid)]
    else:
        raise InvalidConfigError(f"unknown sweep '{sweep}' (expected 'rho' or 'perturb')")
    return [
        CellTask(config=config, rho_index=ri, perturb_index=pi, train_index=ti, rep=rep, rho=rho,
                 p_perturb=q, train_period=t, artifacts_dir=artifacts_dir)
        for ri, pi, rho, q in settings
        for ti, t in enumerate(config.periods)
        for rep in range(config.repetitions)
    ]


def run_sweep(config: ExperimentConfig, sweep: str, threads: int = 1,
              artifacts_dir: str | None = None) -> SweepOutcome:
    tasks = build_tasks(config, sweep, artifacts_dir)
    log.info("sweep=%s cells=%d methods=%s threads=%d", sweep, len(tasks), config.methods, threads)
    if threads <= 1:
        outcomes = [run_cell(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            # map keeps task order whatever the completion order
            outcomes = list(pool.map(run_cell, tasks))
    rows = [r for o in outcomes for r in o.rows]
    failures = [f for o in outcomes for f in o.failures]
    if failures:
        log.warning("sweep=%s finished with %d failed method fits", sweep, len(failures))
    return SweepOutcome(sweep=sweep, rows=rows, failures=failures)


def run_rho_sweep(config: ExperimentConfig, threads: int = 1, artifacts_dir: str | None = None) -> list[ResultRow]:
    return run_sweep(config, "rho", threads, artifacts_dir).rows


def run_perturb_sweep(config: ExperimentConfig, threads: int = 1, artifacts_dir: str | None = None) -> list[ResultRow]:
    return run_sweep(config, "perturb", threads, artifacts_dir).rows


# ---------- summaries ----------

def rows_frame(rows: list[ResultRow]) -> pd.DataFrame:
    return pd.DataFrame([r.model_dump() for r in rows], columns=RESULT_COLUMNS)


def failures_frame(failures: list[CellFailure]) -> pd.DataFrame:
    return pd.DataFrame([f.model_dump() for f in failures], columns=FAILURE_COLUMNS)


def _mean_sd(frame: pd.DataFrame, keys: list[str], value: str) -> pd.DataFrame:
    grouped = frame.groupby(keys, sort=True)[value]
    out = grouped.agg(mean_auc="mean", sd_auc="std", n_reps="count").reset_index()
    out["sd_auc"] = out["sd_auc"].fillna(0.0)
    return out


def summarize(rows: list[ResultRow], failures: list[CellFailure] = ()) -> pd.DataFrame:
    """Mean / sd AUC per (method, rho, p_perturb, train_period, eval_period) plus failed-fit counts."""
    keys = ["method", "rho", "p_perturb", "train_period", "eval_period"]
    frame = rows_frame(rows)
    out = _mean_sd(frame, keys, "auc")
    fails = failures_frame(list(failures))
    fail_keys = ["method", "rho", "p_perturb", "train_period"]
    counts = fails.groupby(fail_keys).size().rename("failed").reset_index() if not fails.empty else None
    if counts is not None:
        out = out.merge(counts, on=fail_keys, how="left")
        out["failed"] = out["failed"].fillna(0).astype(int)
    else:
        out["failed"] = 0
    return out


def summarize_worst_future(rows: list[ResultRow]) -> pd.DataFrame:
    """Per-rep minimum AUC over periods after training, averaged over reps."""
    frame = rows_frame(rows)
    future = frame[frame["eval_period"] > frame["train_period"]]
    keys = ["method", "rho", "p_perturb", "train_period"]
    worst = future.groupby(keys + ["rep"], sort=True)["auc"].min().reset_index()
    return _mean_sd(worst, keys, "auc")


def summarize_regimes(rows: list[ResultRow]) -> pd.DataFrame:
    frame = rows_frame(rows)
    return _mean_sd(frame, ["method", "p_perturb", "train_regime", "eval_regime"], "auc")

