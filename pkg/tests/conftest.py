# tests/conftest.py
import os

import numpy as np
import pytest

from src.domain import CoefficientVector, Dataset, PenaltyPolicy
from src.harness import ExperimentConfig
from src.simulator import DriftConfig


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: Monte-Carlo checks, run with ADAPT_RUN_SLOW=1")


def pytest_collection_modifyitems(config, items):
    if os.environ.get("ADAPT_RUN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="set ADAPT_RUN_SLOW=1 to run slow tests")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


# ---------- data helpers ----------

def logistic_dataset(n: int, beta: CoefficientVector, seed: int, period: int | None = None) -> Dataset:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, beta.p))
    prob = 1.0 / (1.0 + np.exp(-(x @ beta.slopes + beta.intercept)))
    y = (rng.random(n) < prob).astype(float)
    return Dataset(features=x, outcomes=y, period_label=period, origin=f"test:{seed}")


def identity_dataset(n: int, beta: CoefficientVector, seed: int, noise: float = 0.5) -> Dataset:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, beta.p))
    y = x @ beta.slopes + beta.intercept + noise * rng.standard_normal(n)
    return Dataset(features=x, outcomes=y, origin=f"test:{seed}")


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)


@pytest.fixture()
def true_beta():
    return CoefficientVector(intercept=-0.3, slopes=[1.0, -0.8, 0.5, 0.0, 0.0])


@pytest.fixture()
def logistic_data(true_beta):
    return logistic_dataset(300, true_beta, seed=1)


@pytest.fixture()
def identity_data(true_beta):
    return identity_dataset(200, true_beta, seed=2)


@pytest.fixture()
def fast_policy():
    return PenaltyPolicy(folds=3, grid_size=6)


@pytest.fixture()
def drifting_sources(true_beta):
    """Three source periods whose coefficients wander away from true_beta."""
    out = []
    for k, shift in enumerate([0.6, 0.3, 0.1], start=1):
        b = CoefficientVector(intercept=true_beta.intercept, slopes=true_beta.slopes + shift)
        out.append(logistic_dataset(400, b, seed=100 + k, period=k))
    return out


@pytest.fixture()
def current_target(true_beta):
    return logistic_dataset(120, true_beta, seed=200, period=4)


# ---------- configs ----------

@pytest.fixture()
def tiny_drift():
    return DriftConfig(L=6, p=5, p0=1, m=2, N=200, perturb_time=4, rho=0.5, seed=3)


@pytest.fixture()
def tiny_experiment(tiny_drift):
    return ExperimentConfig(
        drift=tiny_drift,
        methods=["adapt", "target_only", "pooled", "maximin"],
        rho_grid=[0.5, 1.0],
        perturb_grid=[0.0, 0.5],
        repetitions=2,
        current_period=3,
        eval_sample_size=200,
        fixed_rho=0.5,
        penalty=PenaltyPolicy(folds=3, grid_size=5),
    )


@pytest.fixture()
def out_dir(tmp_path):
    return str(tmp_path / "out")
