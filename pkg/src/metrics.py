"""AUC, worst-case future AUC and the aging-effect degradation statistic."""
import logging
from collections import defaultdict
from typing import Iterable

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator
from scipy.stats import rankdata

from .errors import MetricPreconditionError

log = logging.getLogger("metrics")


class AucTable(BaseModel):
    """Mean AUC per (train_period, eval_period)."""
    model_config = ConfigDict(frozen=True)

    entries: dict[tuple[int, int], float]
    reps: int = 1

    @field_validator("entries")
    @classmethod
    def _in_unit_interval(cls, v):
        for key, value in v.items():
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"AUC {value} at {key} outside [0, 1]")
        return v

    @classmethod
    def from_records(cls, records: Iterable[tuple[int, int, float]]) -> "AucTable":
        """Average repeated (train_period, eval_period, auc) records into one table."""
        sums: dict[tuple[int, int], list[float]] = defaultdict(list)
        for train, evaluated, value in records:
            sums[(int(train), int(evaluated))].append(float(value))
        if not sums:
            raise MetricPreconditionError("no AUC records to tabulate")
        entries = {key: float(np.mean(values)) for key, values in sorted(sums.items())}
        return cls(entries=entries, reps=max(len(v) for v in sums.values()))

    def get(self, train_period: int, eval_period: int) -> float | None:
        return self.entries.get((train_period, eval_period))


def auc(scores, labels) -> float:
    """Mann-Whitney AUC, P(s+ > s-) + 0.5 P(tie), from average-rank sums."""
    scores = np.asarray(scores, dtype=float).reshape(-1)
    labels = np.asarray(labels, dtype=float).reshape(-1)
    if scores.shape != labels.shape:
        raise MetricPreconditionError(f"{scores.size} scores for {labels.size} labels")
    if not np.all((labels == 0.0) | (labels == 1.0)):
        raise MetricPreconditionError("labels must be binary (0/1)")
    positive = labels == 1.0
    n_pos = int(positive.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricPreconditionError("AUC needs at least one positive and one negative label")
    ranks = rankdata(scores, method="average")
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def worst_future_auc(table: AucTable, train_period: int) -> float:
    future = [v for (train, evaluated), v in table.entries.items() if train == train_period and evaluated > train_period]
    if not future:
        raise MetricPreconditionError(f"no evaluation periods after train period {train_period}")
    return min(future)


def aging_effect(table: AucTable, delta: int, T: int, skip_missing: bool = False) -> float:
    """
    Mean over t = delta+1..T of (AUC(t,t) - AUC(t-delta,t)) / (AUC(t,t) - 0.5):
    the relative AUC a model trained ``delta`` periods earlier gives up against a
    model trained in the evaluation period.
    """
    if not 1 <= delta < T:
        raise MetricPreconditionError(f"delta must satisfy 1 <= delta < T (delta={delta}, T={T})")
    terms = []
    for t in range(delta + 1, T + 1):
        newborn = table.get(t, t)
        aged = table.get(t - delta, t)
        if newborn is None or aged is None:
            missing = (t, t) if newborn is None else (t - delta, t)
            if skip_missing:
                log.debug("aging: skipping t=%d, missing entry %s", t, missing)
                continue
            raise MetricPreconditionError(f"missing AUC entry (train={missing[0]}, eval={missing[1]})")
        denom = newborn - 0.5
        if denom <= 0.0:
            raise MetricPreconditionError(f"denominator nonpositive at t={t} (AUC={newborn})")
        terms.append((newborn - aged) / denom)
    if not terms:
        raise MetricPreconditionError("no period has both entries needed for the aging effect")
    return float(sum(terms) / len(terms))
