import json
import os

import numpy as np
import pandas as pd
import pytest

from src import repo
from src.cli import MANIFEST_NAME, main
from src.domain import CoefficientVector, LinkFunction


def write(path, payload) -> str:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(payload if isinstance(payload, str) else json.dumps(payload))
    return str(path)


def read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


@pytest.fixture()
def data_dir(tmp_path, drifting_sources, current_target):
    d = tmp_path / "data"
    for src in drifting_sources:
        repo.write_dataset_csv(src, str(d / f"source_{src.period_label}.csv"), include_period=True)
    repo.write_dataset_csv(current_target, str(d / "target.csv"), include_period=True)
    write(tmp_path / "penalty.json", {"folds": 3, "grid_size": 6})
    return tmp_path


# ---------- simulate ----------

def test_simulate_writes_datasets_and_is_reproducible(tmp_path):
    cfg = write(tmp_path / "drift.json", {"L": 5, "p": 4, "p0": 1, "m": 2, "N": 40, "perturb_time": 3})
    first, second = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["simulate", "--config", cfg, "--seed", "7", "--out", first]) == 0
    assert main(["simulate", "--config", cfg, "--seed", "7", "--out", second]) == 0

    files = sorted(os.listdir(os.path.join(first, "datasets")))
    assert files == [f"period_{l:02d}.csv" for l in range(1, 6)]
    for name in files:
        assert read_bytes(os.path.join(first, "datasets", name)) == read_bytes(os.path.join(second, "datasets", name))
    assert read_bytes(os.path.join(first, "path.json")) == read_bytes(os.path.join(second, "path.json"))

    manifest = repo.read_json(os.path.join(first, MANIFEST_NAME))
    assert manifest["command"] == "simulate" and manifest["seed"] == 7
    assert repo.read_json(os.path.join(first, "path.json"))["config"]["seed"] == 7


def test_simulate_rejects_malformed_config(tmp_path, capsys):
    cfg = write(tmp_path / "drift.json", '{\n  "L": 5,\n  "p":\n')
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "INVALID_CONFIG" in err and "drift.json:4:" in err


def test_simulate_default_config_has_fifteen_periods(tmp_path):
    out = str(tmp_path / "o")
    cfg = write(tmp_path / "drift.json", {"N": 20, "p": 10, "p0": 3})
    assert main(["simulate", "--config", cfg, "--out", out]) == 0
    assert len(os.listdir(os.path.join(out, "datasets"))) == 15


# ---------- fit ----------

def test_fit_target_only_without_sources(data_dir):
    out = str(data_dir / "fit")
    code = main(["fit", "target-only", "--target", str(data_dir / "data" / "target.csv"),
                 "--penalty", str(data_dir / "penalty.json"), "--out", out, "--seed", "1"])
    assert code == 0
    beta, link = repo.read_coefficients(os.path.join(out, "model.json"))
    assert link is LinkFunction.LOGISTIC and beta.p == 5
    assert repo.read_json(os.path.join(out, "diagnostics.json"))["status"] == "ok"
    assert os.path.exists(os.path.join(out, MANIFEST_NAME))


def test_fit_explicit_zero_seed_is_the_default(data_dir):
    common = ["fit", "target-only", "--target", str(data_dir / "data" / "target.csv"),
              "--penalty", str(data_dir / "penalty.json")]
    assert main([*common, "--seed", "0", "--out", str(data_dir / "zero")]) == 0
    assert main([*common, "--out", str(data_dir / "none")]) == 0
    for name in ("zero", "none"):
        assert repo.read_json(str(data_dir / name / MANIFEST_NAME))["seed"] == 0
        assert repo.read_json(str(data_dir / name / "diagnostics.json"))["seed"] == 0
    assert read_bytes(data_dir / "zero" / "model.json") == read_bytes(data_dir / "none" / "model.json")


def test_fit_adapt_requires_sources(data_dir, capsys):
    code = main(["fit", "adapt", "--target", str(data_dir / "data" / "target.csv"), "--out", str(data_dir / "o")])
    assert code == 2
    assert "source required" in capsys.readouterr().err


def test_fit_maximin_equals_unconstrained_adapt(data_dir):
    common = ["--sources", str(data_dir / "data" / "source_*.csv"), "--target", str(data_dir / "data" / "target.csv"),
              "--penalty", str(data_dir / "penalty.json"), "--seed", "3"]
    assert main(["fit", "maximin", *common, "--out", str(data_dir / "mm")]) == 0
    assert main(["fit", "adapt", *common, "--tau", "inf", "--anchor", "zero", "--bank", "sources",
                 "--out", str(data_dir / "ad")]) == 0
    mm, _ = repo.read_coefficients(str(data_dir / "mm" / "model.json"))
    ad, _ = repo.read_coefficients(str(data_dir / "ad" / "model.json"))
    assert np.allclose(mm.as_array(), ad.as_array(), atol=1e-7)


def test_fit_adapt_writes_diagnostics(data_dir):
    out = str(data_dir / "ad")
    assert main(["fit", "adapt", "--sources", str(data_dir / "data" / "source_*.csv"),
                 "--target", str(data_dir / "data" / "target.csv"),
                 "--penalty", str(data_dir / "penalty.json"), "--out", out]) == 0
    diag = repo.read_json(os.path.join(out, "diagnostics.json"))
    assert diag["bank_labels"] == [4, 1, 2, 3]
    assert sum(diag["weights"]) == pytest.approx(1.0)
    assert diag["constraint_value"] <= diag["tau"] + 1e-6


def test_fit_missing_source_glob_is_io_error(data_dir):
    code = main(["fit", "pooled", "--sources", str(data_dir / "nothing_*.csv"),
                 "--target", str(data_dir / "data" / "target.csv"), "--out", str(data_dir / "o")])
    assert code == 3


# ---------- evaluate / aging ----------

def test_evaluate_prints_auc(data_dir, capsys):
    model = str(data_dir / "zero.json")
    repo.write_coefficients(CoefficientVector.zeros(5), LinkFunction.LOGISTIC, model)
    assert main(["evaluate", "--model", model, "--data", str(data_dir / "data" / "target.csv")]) == 0
    assert float(capsys.readouterr().out.strip()) == 0.5

    wide = str(data_dir / "wide.json")
    repo.write_coefficients(CoefficientVector.zeros(6), LinkFunction.LOGISTIC, wide)
    assert main(["evaluate", "--model", wide, "--data", str(data_dir / "data" / "target.csv")]) == 2


def aging_csv(tmp_path, rows) -> str:
    path = str(tmp_path / "results.csv")
    pd.DataFrame(rows, columns=["method", "train_period", "eval_period", "rep", "auc"]).to_csv(path, index=False)
    return path


def test_aging_prints_zero_for_flat_table(tmp_path, capsys):
    rows = [("adapt", s, t, 0, 0.8) for t in range(1, 5) for s in range(1, t + 1)]
    assert main(["aging", "--results", aging_csv(tmp_path, rows), "--delta", "1"]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert len(out) == 1 and float(out[0]) == 0.0


def test_aging_worked_example(tmp_path, capsys):
    rows = [("adapt", 2, 2, 0, 0.9), ("adapt", 1, 2, 0, 0.8), ("adapt", 1, 1, 0, 0.85)]
    assert main(["aging", "--results", aging_csv(tmp_path, rows), "--delta", "1", "--horizon", "2"]) == 0
    assert float(capsys.readouterr().out) == pytest.approx(0.25)


def test_aging_nonpositive_denominator(tmp_path, capsys):
    rows = [("adapt", 2, 2, 0, 0.5), ("adapt", 1, 2, 0, 0.6)]
    assert main(["aging", "--results", aging_csv(tmp_path, rows), "--delta", "1", "--horizon", "2"]) == 5
    captured = capsys.readouterr()
    assert captured.out == ""
    assert "denominator nonpositive at t=2" in captured.err


# ---------- benchmark ----------

def test_benchmark_writes_results_and_summaries(tmp_path, tiny_experiment):
    config = tiny_experiment.model_copy(update={"rho_grid": [1.0], "repetitions": 1})
    cfg = write(tmp_path / "exp.json", config.model_dump_json())
    out = str(tmp_path / "bench")
    assert main(["benchmark", "--config", cfg, "--sweep", "perturb", "--out", out]) == 0
    results = pd.read_csv(os.path.join(out, "results.csv"))
    assert len(results) == 2 * 4 * 4
    for name in ("summary.csv", "worst_future.csv", "regimes.csv", "failures.csv", MANIFEST_NAME):
        assert os.path.exists(os.path.join(out, name))
    assert os.path.isdir(os.path.join(out, "cells"))


def test_benchmark_thread_count_does_not_change_results(tmp_path, tiny_experiment):
    config = tiny_experiment.model_copy(update={"perturb_grid": [0.0], "repetitions": 2,
                                                "methods": ["target_only", "pooled"]})
    cfg = write(tmp_path / "exp.json", config.model_dump_json())
    one, many = str(tmp_path / "one"), str(tmp_path / "many")
    assert main(["benchmark", "--config", cfg, "--sweep", "rho", "--out", one, "--threads", "1"]) == 0
    assert main(["benchmark", "--config", cfg, "--sweep", "rho", "--out", many, "--threads", "3"]) == 0
    assert read_bytes(os.path.join(one, "results.csv")) == read_bytes(os.path.join(many, "results.csv"))


def test_bad_thread_count(tmp_path):
    assert main(["evaluate", "--model", "m.json", "--data", "d.csv", "--threads", "0"]) == 2
