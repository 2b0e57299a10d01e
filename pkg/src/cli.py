"""
Command line: ``python -m src <command> [options]``.

stdout carries only results (one number for ``evaluate`` / ``aging``); logs and
error messages go to stderr. Exit codes: 0 ok, 2 bad input, 3 I/O failure,
4 solver failure, 5 metric precondition.
"""
import argparse
import glob
import logging
import os
import sys
from datetime import datetime, timezone

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from . import __version__, repo
from .adapt import Anchor, BankKind, fit_adapt
from .domain import CoefficientVector, LinkFunction, PenaltyPolicy, check_dimensions
from .errors import AdaptError, DataIOError, InvalidConfigError
from .glm import negative_log_likelihood, predict_scores
from .harness import (
    ExperimentConfig,
    failures_frame,
    fit_maximin,
    fit_pooled,
    fit_target_only,
    rows_frame,
    run_sweep,
    summarize,
    summarize_regimes,
    summarize_worst_future,
)
from .logger_config import run_context, setup_logging
from .metrics import aging_effect, auc
from .simulator import DriftConfig, generate_period_datasets

log = logging.getLogger("cli")

MANIFEST_NAME = "manifest.json"
FIT_METHODS = ("adapt", "target-only", "pooled", "maximin")


class RunManifest(BaseModel):
    model_config = ConfigDict(frozen=True)

    command: str
    config_path: str | None = None
    seed: int | None = None
    out_dir: str
    version: str = __version__
    timestamp: str


def _timestamp() -> str:
    # SOURCE_DATE_EPOCH pins the manifest for reproducible reruns
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    moment = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
    return moment.strftime("%Y-%m-%dT%H:%M:%SZ")


def write_manifest(command: str, out_dir: str, seed: int | None, config_path: str | None = None) -> RunManifest:
    manifest = RunManifest(command=command, config_path=config_path, seed=seed,
                           out_dir=os.path.abspath(out_dir), timestamp=_timestamp())
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as e:
        raise DataIOError(f"cannot create output directory {out_dir}: {e}") from e
    repo.write_json(manifest.model_dump(), os.path.join(out_dir, MANIFEST_NAME))
    return manifest


def _format_number(value: float) -> str:
    return format(value, ".12g")


def _load_optional(path: str | None, model_cls: type[BaseModel]) -> BaseModel:
    return repo.load_config(path, model_cls) if path else model_cls()


# ---------- commands ----------

def cmd_simulate(args) -> int:
    config: DriftConfig = _load_optional(args.config, DriftConfig)
    if args.seed is not None:
        config = DriftConfig.model_validate({**config.model_dump(), "seed": args.seed})
    write_manifest("simulate", args.out, config.seed, args.config)

    path, datasets = generate_period_datasets(config)
    for data in datasets:
        repo.write_dataset_csv(data, os.path.join(args.out, "datasets", f"period_{data.period_label:02d}.csv"),
                               include_period=True)
    repo.write_json({
        "config": config.model_dump(),
        "betas": [b.to_json_dict(LinkFunction.LOGISTIC) for b in path.betas],
        "shock_mask": path.shock_mask.astype(int).tolist(),
        "perturbation": path.perturbation.tolist(),
    }, os.path.join(args.out, "path.json"))
    log.info("simulate wrote %d period datasets to %s", len(datasets), args.out)
    return 0


def _read_sources(patterns: list[str]) -> list:
    paths: list[str] = []
    for pattern in patterns or []:
        matched = sorted(glob.glob(pattern))
        if not matched:
            raise DataIOError(f"no files match {pattern}")
        paths.extend(matched)
    return [repo.read_dataset_csv(p) for p in paths]


def _fit_seed(args) -> int:
    return args.seed if args.seed is not None else 0


def _fit(args, sources, target, link, policy) -> tuple[CoefficientVector, dict]:
    seed = _fit_seed(args)
    base = {"method": args.method, "sources": len(sources), "target_n": target.n, "seed": seed}
    if args.method == "adapt":
        if not sources:
            raise InvalidConfigError(">=1 source required for adapt")
        result = fit_adapt(sources, target, link, split_seed=seed, penalty_policy=policy,
                           anchor=Anchor(args.anchor), bank=BankKind(args.bank), tau=args.tau)
        base.update(
            result.diagnostics.model_dump(),
            weights=result.weights.gamma.tolist(),
            bank_labels=list(result.bank.labels),
            gamma_tilde=result.gamma_tilde.gamma.tolist() if result.gamma_tilde is not None else None,
        )
        return result.beta, base
    if args.method == "target-only":
        beta = fit_target_only(target, link, policy, seed)
    elif args.method == "pooled":
        beta = fit_pooled(sources, target, link, policy, seed)
    else:
        if not sources:
            raise InvalidConfigError(">=1 source required for maximin")
        beta = fit_maximin(sources, target, link, policy, seed, include_target=args.include_target)
    base["target_nll"] = negative_log_likelihood(beta, target, link)
    return beta, base


def cmd_fit(args) -> int:
    link = LinkFunction(args.link)
    policy: PenaltyPolicy = _load_optional(args.penalty, PenaltyPolicy)
    write_manifest("fit", args.out, _fit_seed(args), args.penalty)
    diagnostics_path = os.path.join(args.out, "diagnostics.json")

    sources = _read_sources(args.sources)
    target = repo.read_dataset_csv(args.target)
    try:
        beta, diagnostics = _fit(args, sources, target, link, policy)
    except AdaptError as e:
        if e.exit_code == 4:
            repo.write_json({
                "method": args.method, "status": "failed", "error": e.code, "message": e.message,
                "objective": getattr(e, "objective", None), "iterations": getattr(e, "iterations", None),
            }, diagnostics_path)
        raise
    repo.write_coefficients(beta, link, os.path.join(args.out, "model.json"))
    repo.write_json({"status": "ok", **diagnostics}, diagnostics_path)
    log.info("fit %s: %d sources, target n=%d", args.method, len(sources), target.n)
    return 0


def cmd_benchmark(args) -> int:
    config: ExperimentConfig = _load_optional(args.config, ExperimentConfig)
    if args.seed is not None:
        config = ExperimentConfig.model_validate({**config.model_dump(), "seed": args.seed})
    write_manifest("benchmark", args.out, config.seed, args.config)

    outcome = run_sweep(config, args.sweep, threads=args.threads, artifacts_dir=args.out)
    repo.write_frame(rows_frame(outcome.rows), os.path.join(args.out, "results.csv"))
    repo.write_frame(failures_frame(outcome.failures), os.path.join(args.out, "failures.csv"))
    if outcome.rows:
        repo.write_frame(summarize(outcome.rows, outcome.failures), os.path.join(args.out, "summary.csv"))
        repo.write_frame(summarize_worst_future(outcome.rows), os.path.join(args.out, "worst_future.csv"))
        if args.sweep == "perturb":
            repo.write_frame(summarize_regimes(outcome.rows), os.path.join(args.out, "regimes.csv"))
    log.info("benchmark %s: %d rows, %d failures", args.sweep, len(outcome.rows), len(outcome.failures))
    return 0


def cmd_evaluate(args) -> int:
    beta, link = repo.read_coefficients(args.model)
    data = repo.read_dataset_csv(args.data)
    check_dimensions(beta, data)
    print(_format_number(auc(predict_scores(beta, data, link), data.outcomes)))
    return 0


def cmd_aging(args) -> int:
    table = repo.read_auc_table(args.results, method=args.method, rho=args.rho, p_perturb=args.p_perturb)
    horizon = args.horizon if args.horizon is not None else max(e for _, e in table.entries)
    print(_format_number(aging_effect(table, args.delta, horizon, skip_missing=args.skip_missing)))
    return 0


# ---------- parser ----------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (overrides config files)")
    common.add_argument("--threads", type=int, default=1, help="worker processes for benchmark")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    common.add_argument("--log-dir", default=None, help="also log to <dir>/adapt.log")

    parser = argparse.ArgumentParser(prog="adapt", description="Drift-robust transfer estimation for GLMs")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="draw per-period datasets from the drift model")
    p.add_argument("--config", help="DriftConfig JSON")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("fit", parents=[common], help="fit one estimator on CSV data")
    p.add_argument("method", choices=FIT_METHODS)
    p.add_argument("--sources", nargs="*", default=[], help="source CSV globs")
    p.add_argument("--target", required=True, help="current-period CSV")
    p.add_argument("--link", default=LinkFunction.LOGISTIC.value, choices=[l.value for l in LinkFunction])
    p.add_argument("--penalty", help="PenaltyPolicy JSON")
    p.add_argument("--tau", type=float, default=None, help="likelihood budget; default averaging rule")
    p.add_argument("--anchor", default=Anchor.TARGET.value, choices=[a.value for a in Anchor])
    p.add_argument("--bank", default=BankKind.FULL.value, choices=[b.value for b in BankKind])
    p.add_argument("--include-target", action="store_true", help="maximin: add the target fit to the bank")
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser("benchmark", parents=[common], help="run a rho or perturbation sweep")
    p.add_argument("--config", help="ExperimentConfig JSON")
    p.add_argument("--sweep", required=True, choices=["rho", "perturb"])
    p.set_defaults(handler=cmd_benchmark)

    p = sub.add_parser("evaluate", parents=[common], help="print the AUC of a model on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("aging", parents=[common], help="print the aging effect of a results table")
    p.add_argument("--results", required=True)
    p.add_argument("--delta", type=int, required=True)
    p.add_argument("--horizon", type=int, default=None, help="last period T (default: last evaluated)")
    p.add_argument("--method", default=None)
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--p-perturb", type=float, default=None)
    p.add_argument("--skip-missing", action="store_true")
    p.set_defaults(handler=cmd_aging)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level, args.log_dir)
    run_id = f"{args.command}-{args.seed if args.seed is not None else 'cfg'}"
    with run_context(run_id):
        try:
            if args.threads < 1:
                raise InvalidConfigError("--threads must be >= 1")
            return args.handler(args)
        except AdaptError as e:
            log.error("%s failed: %s", args.command, e.message)
            print(f"error: {e.code}: {e.message}", file=sys.stderr)
            return e.exit_code
        except ValidationError as e:
            print(f"error: INVALID_CONFIG: {repo.first_validation_message(e)}", file=sys.stderr)
            return 2
        except OSError as e:
            print(f"error: IO_FAILURE: {e}", file=sys.stderr)
            return 3
        except np.linalg.LinAlgError as e:
            print(f"error: SOLVER_FAILURE: {e}", file=sys.stderr)
            return 4
