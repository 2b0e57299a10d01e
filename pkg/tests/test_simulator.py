import numpy as np
import pytest
from pydantic import ValidationError

from src.domain import CoefficientVector
from src.errors import InvalidConfigError
from src.simulator import (
    DriftConfig,
    generate_coefficient_path,
    generate_dataset,
    generate_period_datasets,
    generate_scenario,
)


def test_seed_vectors_have_p0_zeros():
    config = DriftConfig(p=40, p0=12, m=3, seed=5)
    path = generate_coefficient_path(config)
    for l in range(1, config.m + 1):
        assert int(np.sum(path.at(l).slopes == 0.0)) == 12
    assert not path.shock_mask[: config.m].any()


def test_zero_perturbation_leaves_path_untouched():
    a = generate_coefficient_path(DriftConfig(p=20, p0=5, p_perturb=0.0, perturb_time=8, seed=2))
    b = generate_coefficient_path(DriftConfig(p=20, p0=5, p_perturb=0.0, perturb_time=15, seed=2))
    for l in range(1, 16):
        assert np.array_equal(a.at(l).slopes, b.at(l).slopes)


def test_perturbation_only_changes_later_periods():
    base = generate_coefficient_path(DriftConfig(p=20, p0=5, p_perturb=0.0, seed=4))
    shifted = generate_coefficient_path(DriftConfig(p=20, p0=5, p_perturb=0.6, seed=4))
    for l in range(1, 8):
        assert np.array_equal(base.at(l).slopes, shifted.at(l).slopes)
    assert not np.array_equal(base.at(8).slopes, shifted.at(8).slopes)
    assert np.array_equal(base.shock_mask, shifted.shock_mask)
    assert np.array_equal(base.perturbation, shifted.perturbation)


def test_perturbation_formula_at_shift_period():
    config = DriftConfig(p=10, p0=0, p_shock=0.0, m=1, ar_weights=[1.0], p_perturb=0.3, perturb_time=5, seed=1)
    path = generate_coefficient_path(config)
    expected = 0.7 * path.at(4).slopes + 0.3 * path.perturbation
    assert np.allclose(path.at(5).slopes, expected)


def test_copy_recursion_is_constant():
    config = DriftConfig(L=10, p=15, p0=3, m=1, ar_weights=[1.0], p_shock=0.0, p_perturb=0.0, seed=8)
    path = generate_coefficient_path(config)
    for l in range(2, 11):
        assert np.array_equal(path.at(l).slopes, path.at(1).slopes)
    assert all(b.intercept == 0.0 for b in path.betas)


def test_shocks_replace_coordinates():
    config = DriftConfig(L=12, p=30, p0=0, p_shock=1.0, seed=3)
    path = generate_coefficient_path(config)
    assert path.shock_mask[config.m:].all()


@pytest.mark.parametrize("p_shock", [0.2, 0.5])
def test_shock_rate_matches_probability(p_shock):
    rates = []
    for seed in range(10):
        config = DriftConfig(L=15, p=100, p0=30, p_shock=p_shock, seed=seed)
        mask = generate_coefficient_path(config).shock_mask[config.m:]
        rates.append(mask.mean())
    assert abs(np.mean(rates) - p_shock) <= 0.03


def test_post_shift_deviation_grows_with_perturbation():
    levels = [0.0, 0.3, 0.6, 0.9]
    deviation = {q: [] for q in levels}
    for seed in range(100):
        paths = {q: generate_coefficient_path(DriftConfig(p_perturb=q, seed=seed)) for q in levels}
        unperturbed = paths[0.0]
        for q in levels:
            deviation[q].append(np.mean([
                np.linalg.norm(paths[q].at(t).slopes - unperturbed.at(t).slopes) for t in range(8, 16)
            ]))
    means = [np.mean(deviation[q]) for q in levels]
    assert means[0] == 0.0
    assert all(b > a for a, b in zip(means, means[1:]))


def test_generate_dataset_moments():
    n = 4000
    data = generate_dataset(CoefficientVector.zeros(6), n, rng_seed=9)
    assert abs(data.outcomes.mean() - 0.5) <= 3 * np.sqrt(0.25 / n)
    assert np.all(np.abs(data.features.mean(axis=0)) <= 4 / np.sqrt(n))
    assert np.all(np.abs(data.features.var(axis=0) - 1) <= 5 / np.sqrt(n))
    again = generate_dataset(CoefficientVector.zeros(6), n, rng_seed=9)
    assert np.array_equal(data.features, again.features)
    assert np.array_equal(data.outcomes, again.outcomes)
    with pytest.raises(InvalidConfigError):
        generate_dataset(CoefficientVector.zeros(6), 0, rng_seed=9)


def test_current_size_follows_rho():
    assert DriftConfig(rho=0.2, N=2000).current_size == 400
    assert DriftConfig(rho=1.0, N=2000).current_size == 2000


def test_scenario_layout(tiny_drift):
    scenario = generate_scenario(tiny_drift, current_period=3, eval_sample_size=50)
    assert [d.period_label for d in scenario.historical] == [1, 2]
    assert scenario.current.period_label == 3
    assert scenario.current.n == tiny_drift.current_size
    assert [d.period_label for d in scenario.futures] == [3, 4, 5, 6]
    assert all(d.n == 50 for d in scenario.futures)
    origins = [d.origin for d in scenario.historical + [scenario.current] + scenario.futures]
    assert len(set(origins)) == len(origins)


def test_scenario_default_period_and_reproducibility(tiny_drift):
    a = generate_scenario(tiny_drift, eval_sample_size=30)
    b = generate_scenario(tiny_drift, eval_sample_size=30)
    assert a.current_period == tiny_drift.perturb_time - 1
    assert np.array_equal(a.current.features, b.current.features)
    assert np.array_equal(a.futures[-1].outcomes, b.futures[-1].outcomes)
    with pytest.raises(InvalidConfigError):
        generate_scenario(tiny_drift, current_period=tiny_drift.L + 1)


def test_rho_changes_only_the_current_sample(tiny_drift):
    small = generate_scenario(tiny_drift.model_copy(update={"rho": 0.25}), 3, 40)
    large = generate_scenario(tiny_drift.model_copy(update={"rho": 1.0}), 3, 40)
    assert np.array_equal(small.historical[0].features, large.historical[0].features)
    assert np.array_equal(small.futures[2].outcomes, large.futures[2].outcomes)
    assert small.current.n == 50 and large.current.n == 200


def test_period_datasets_cover_every_period():
    config = DriftConfig(L=5, p=4, p0=1, m=2, N=30, perturb_time=3)
    path, datasets = generate_period_datasets(config)
    assert path.length == 5
    assert [d.period_label for d in datasets] == [1, 2, 3, 4, 5]
    assert all(d.n == 30 and d.p == 4 for d in datasets)


@pytest.mark.parametrize("bad", [
    {"p": 10, "p0": 11},
    {"m": 0},
    {"ar_weights": [0.5, 0.5]},
    {"p_perturb": 1.0},
    {"rho": 0.0},
    {"perturb_time": 16},
    {"unknown_field": 1},
])
def test_drift_config_validation(bad):
    with pytest.raises(ValidationError):
        DriftConfig(**bad)
