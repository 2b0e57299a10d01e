import numpy as np
import pytest

from src.domain import Dataset
from src.errors import DimensionMismatchError, InvalidConfigError, InvalidDataError
from src.sampling import concat_datasets, downsample_controls, split_target


def numbered(n: int, p: int = 2, y=None) -> Dataset:
    """Row i has features (i, i, ...) so a row's identity survives subsetting."""
    x = np.repeat(np.arange(n, dtype=float)[:, None], p, axis=1)
    y = np.zeros(n) if y is None else np.asarray(y, dtype=float)
    return Dataset(features=x, outcomes=y, period_label=4, origin="rows")


def test_split_halves_disjoint_cover():
    first, second = split_target(numbered(10), 0.5, rng_seed=3)
    assert (first.n, second.n) == (5, 5)
    rows = sorted(first.features[:, 0].tolist() + second.features[:, 0].tolist())
    assert rows == list(range(10))
    assert first.period_label == 4 and second.origin == "rows"


def test_split_is_seeded():
    a, _ = split_target(numbered(30), 0.5, rng_seed=1)
    b, _ = split_target(numbered(30), 0.5, rng_seed=1)
    c, _ = split_target(numbered(30), 0.5, rng_seed=2)
    assert np.array_equal(a.features, b.features)
    assert not np.array_equal(a.features, c.features)


def test_split_uneven_fraction_and_errors():
    first, second = split_target(numbered(11), 0.3, rng_seed=0)
    assert (first.n, second.n) == (3, 8)
    with pytest.raises(InvalidConfigError):
        split_target(numbered(10), 1.0)
    with pytest.raises(InvalidDataError):
        split_target(numbered(1), 0.5)


def test_downsample_keeps_cases_and_ratio():
    y = np.array([1] * 5 + [0] * 200)
    out = downsample_controls(numbered(205, y=y), 20, rng_seed=7)
    assert out.n == 105
    assert int(out.outcomes.sum()) == 5
    assert set(range(5)) <= set(out.features[:, 0].astype(int).tolist())


def test_downsample_clamps_to_available_controls():
    y = np.array([1] * 5 + [0] * 30)
    out = downsample_controls(numbered(35, y=y), 20, rng_seed=7)
    assert out.n == 35
    with pytest.raises(InvalidDataError):
        downsample_controls(numbered(10), 2)
    with pytest.raises(InvalidConfigError):
        downsample_controls(numbered(10, y=[1] * 10), 0)


def test_concat_datasets():
    a, b = numbered(3), numbered(4)
    joined = concat_datasets([a, b], period_label=9)
    assert joined.n == 7 and joined.period_label == 9
    assert joined.origin == "rows+rows"
    with pytest.raises(DimensionMismatchError):
        concat_datasets([numbered(3, p=2), numbered(3, p=3)])
    with pytest.raises(InvalidDataError):
        concat_datasets([])
