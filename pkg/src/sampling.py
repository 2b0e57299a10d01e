"""Row-level dataset operations: target splitting, case-control downsampling, pooling."""
import logging

import numpy as np

from .domain import Dataset
from .errors import DimensionMismatchError, InvalidConfigError, InvalidDataError
from .rng import substream

log = logging.getLogger("sampling")


def split_target(data: Dataset, fraction: float = 0.5, rng_seed: int = 0) -> tuple[Dataset, Dataset]:
    """Shuffle row indices and cut at floor(fraction * n)."""
    if not 0.0 < fraction < 1.0:
        raise InvalidConfigError(f"split fraction must lie in (0, 1), got {fraction}")
    n = data.n
    cut = int(np.floor(fraction * n))
    if cut < 1 or cut >= n:
        raise InvalidDataError(f"split of n={n} at fraction={fraction} leaves an empty side")
    perm = substream(rng_seed).permutation(n)
    first, second = np.sort(perm[:cut]), np.sort(perm[cut:])
    return data.subset(first), data.subset(second)


def downsample_controls(data: Dataset, controls_per_case: int, rng_seed: int = 0) -> Dataset:
    """Keep every case (y=1) and at most cases*ratio controls drawn without replacement."""
    if controls_per_case < 1:
        raise InvalidConfigError("controls_per_case must be >= 1")
    cases = np.flatnonzero(data.outcomes == 1.0)
    controls = np.flatnonzero(data.outcomes == 0.0)
    if cases.size == 0:
        raise InvalidDataError("downsampling needs at least one case (y=1)")
    keep = min(controls.size, cases.size * controls_per_case)
    picked = substream(rng_seed).choice(controls, size=keep, replace=False)
    rows = np.sort(np.concatenate((cases, picked)))
    log.info("downsample cases=%d controls=%d->%d", cases.size, controls.size, keep)
    return data.subset(rows)


def concat_datasets(parts: list[Dataset], period_label: int | None = None) -> Dataset:
    """Row-concatenate datasets sharing p; the origin tag lists every part."""
    if not parts:
        raise InvalidDataError("nothing to concatenate")
    dims = {d.p for d in parts}
    if len(dims) != 1:
        raise DimensionMismatchError(f"datasets disagree on dimension: {sorted(dims)}")
    origins = [d.origin for d in parts if d.origin]
    return Dataset(
        features=np.vstack([d.features for d in parts]),
        outcomes=np.concatenate([d.outcomes for d in parts]),
        period_label=period_label,
        origin="+".join(origins) if origins else None,
    )
