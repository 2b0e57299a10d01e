"""
Generalized linear model primitives: mean negative log-likelihood, its
derivatives, elastic-net fitting and cross-validated lambda selection.

All losses are per-sample means. The intercept is always present and never
penalized. Penalized fits run cyclic coordinate descent on the IRLS quadratic
approximation (logistic) or directly on the least-squares objective (identity).
"""
import logging
from typing import NamedTuple

import numpy as np
from scipy.special import expit
from sklearn.model_selection import KFold, StratifiedKFold

from .domain import CoefficientVector, Dataset, LinkFunction, PenaltyConfig, PenaltyPolicy, check_dimensions
from .errors import ConvergenceError, InvalidDataError

log = logging.getLogger("glm")

MAX_OUTER_ITER = 10_000
MAX_SWEEPS = 10_000
COEF_TOL = 1e-8
INNER_TOL = 1e-10
MIN_IRLS_WEIGHT = 1e-6
LAMBDA_MIN_RATIO = 1e-3
MIXING_FLOOR = 1e-3  # lambda_max for pure ridge is computed as if mixing were this
MAX_HALVINGS = 40


def _augment(features: np.ndarray) -> np.ndarray:
    return np.column_stack((np.ones(features.shape[0]), features))


def _check_outcomes(data: Dataset, link: LinkFunction) -> None:
    if link is LinkFunction.LOGISTIC and not data.is_binary():
        raise InvalidDataError("logistic link requires every outcome to be exactly 0 or 1")


def _validate(beta: CoefficientVector, data: Dataset, link: LinkFunction) -> None:
    check_dimensions(beta, data)
    _check_outcomes(data, link)


def _linear_predictor(beta: CoefficientVector, data: Dataset) -> np.ndarray:
    return data.features @ beta.slopes + beta.intercept


def _mean_nll(eta: np.ndarray, y: np.ndarray, link: LinkFunction) -> float:
    if link is LinkFunction.LOGISTIC:
        return float(np.mean(np.logaddexp(0.0, eta) - y * eta))
    r = y - eta
    return float(0.5 * np.mean(r * r))


def negative_log_likelihood(beta: CoefficientVector, data: Dataset, link: LinkFunction) -> float:
    link = LinkFunction(link)
    _validate(beta, data, link)
    return _mean_nll(_linear_predictor(beta, data), data.outcomes, link)


def gradient(beta: CoefficientVector, data: Dataset, link: LinkFunction) -> np.ndarray:
    """Gradient of the mean NLL w.r.t. (intercept, slopes)."""
    link = LinkFunction(link)
    _validate(beta, data, link)
    mu = link.mean(_linear_predictor(beta, data))
    return _augment(data.features).T @ (mu - data.outcomes) / data.n


def hessian(beta: CoefficientVector, data: Dataset, link: LinkFunction) -> np.ndarray:
    """Hessian of the mean NLL, (1/n) X~' W X~ with X~ the intercept-augmented design."""
    link = LinkFunction(link)
    _validate(beta, data, link)
    xa = _augment(data.features)
    if link is LinkFunction.LOGISTIC:
        mu = expit(_linear_predictor(beta, data))
        w = mu * (1.0 - mu)
    else:
        w = np.ones(data.n)
    h = (xa.T * w) @ xa / data.n
    return 0.5 * (h + h.T)


def predict_scores(beta: CoefficientVector, data: Dataset, link: LinkFunction) -> np.ndarray:
    link = LinkFunction(link)
    check_dimensions(beta, data)
    return link.mean(_linear_predictor(beta, data))


def penalized_objective(beta: CoefficientVector, data: Dataset, link: LinkFunction,
                        penalty: PenaltyConfig) -> float:
    """Mean NLL plus the elastic-net penalty on the slopes as given (no standardization)."""
    s = beta.slopes
    pen = penalty.lambda_ * (penalty.mixing * np.abs(s).sum() + 0.5 * (1.0 - penalty.mixing) * s @ s)
    return negative_log_likelihood(beta, data, link) + float(pen)


# ---------- solver ----------

class _Design(NamedTuple):
    xa: np.ndarray        # intercept-augmented, possibly standardized
    y: np.ndarray
    center: np.ndarray
    scale: np.ndarray
    free: np.ndarray      # coordinates (0 = intercept) the solver may move


def _prepare(data: Dataset, standardize: bool) -> _Design:
    x = data.features
    center = x.mean(axis=0)
    sd = x.std(axis=0)
    constant = sd <= 1e-12 * np.maximum(1.0, np.abs(center))
    if standardize:
        scale = np.where(constant, 1.0, sd)
        z = (x - center) / scale
        z[:, constant] = 0.0
    else:
        center = np.zeros(x.shape[1])
        scale = np.ones(x.shape[1])
        z = x
    free = np.concatenate(([0], np.flatnonzero(~constant) + 1))
    return _Design(_augment(z), data.outcomes, center, scale, free)


def _to_original_scale(b: np.ndarray, design: _Design) -> CoefficientVector:
    slopes = b[1:] / design.scale
    intercept = b[0] - design.center @ slopes
    return CoefficientVector(intercept=float(intercept), slopes=slopes)


def _null_coefficients(design: _Design, link: LinkFunction) -> np.ndarray:
    b = np.zeros(design.xa.shape[1])
    ybar = float(design.y.mean())
    if link is LinkFunction.LOGISTIC:
        if ybar <= 0.0 or ybar >= 1.0:
            raise InvalidDataError("degenerate outcome vector: all outcomes are identical")
        b[0] = np.log(ybar / (1.0 - ybar))
    else:
        b[0] = ybar
    return b


def _objective(b: np.ndarray, design: _Design, link: LinkFunction, lam: float, mixing: float) -> float:
    s = b[1:]
    pen = lam * (mixing * np.abs(s).sum() + 0.5 * (1.0 - mixing) * s @ s)
    return _mean_nll(design.xa @ b, design.y, link) + float(pen)


def _soft_threshold(x: float, t: float) -> float:
    if x > t:
        return x - t
    if x < -t:
        return x + t
    return 0.0


def _sweep(a, grad, beta, coords, l1, l2) -> float:
    max_delta = 0.0
    for j in coords:
        ajj = a[j, j]
        old = beta[j]
        if j == 0:
            new = old - grad[0] / ajj
        else:
            new = _soft_threshold(ajj * old - grad[j], l1) / (ajj + l2)
        delta = new - old
        if delta != 0.0:
            beta[j] = new
            grad += delta * a[:, j]
            max_delta = max(max_delta, abs(delta))
    return max_delta


def _coordinate_descent(a: np.ndarray, g: np.ndarray, b: np.ndarray, free: np.ndarray,
                        lam: float, mixing: float) -> np.ndarray:
    """
    Minimize g'(x-b) + 1/2 (x-b)'A(x-b) + penalty(x) by cyclic coordinate descent.
    Full sweeps alternate with sweeps over the current non-zero set.
    """
    beta = b.copy()
    grad = g.copy()
    l1, l2 = lam * mixing, lam * (1.0 - mixing)
    full = True
    for _ in range(MAX_SWEEPS):
        coords = free if full else free[(beta[free] != 0.0) | (free == 0)]
        delta = _sweep(a, grad, beta, coords, l1, l2)
        if delta < INNER_TOL:
            if full:
                return beta
            full = True
        else:
            full = False
    log.warning("coordinate descent hit %d sweeps", MAX_SWEEPS)
    return beta


def _solve(design: _Design, link: LinkFunction, lam: float, mixing: float,
           b_init: np.ndarray) -> tuple[np.ndarray, int, float]:
    b = b_init.copy()
    n = design.y.shape[0]
    xa = design.xa
    obj = _objective(b, design, link, lam, mixing)
    for it in range(1, MAX_OUTER_ITER + 1):
        eta = xa @ b
        if link is LinkFunction.LOGISTIC:
            mu = expit(eta)
            w = np.maximum(mu * (1.0 - mu), MIN_IRLS_WEIGHT)
        else:
            mu = eta
            w = np.ones(n)
        g = xa.T @ (mu - design.y) / n
        a = (xa.T * w) @ xa / n
        target = _coordinate_descent(a, g, b, design.free, lam, mixing)

        # step-halving keeps the penalized objective non-increasing
        step, cand = 1.0, target
        cand_obj = _objective(cand, design, link, lam, mixing)
        halvings = 0
        while cand_obj > obj + 1e-13 * (1.0 + abs(obj)) and halvings < MAX_HALVINGS:
            step *= 0.5
            halvings += 1
            cand = b + step * (target - b)
            cand_obj = _objective(cand, design, link, lam, mixing)
        if cand_obj > obj + 1e-13 * (1.0 + abs(obj)):
            log.debug("irls stalled at iter=%d objective=%.12g", it, obj)
            return b, it, obj

        change = float(np.max(np.abs(cand - b)))
        log.debug("irls iter=%d objective=%.12g change=%.3g step=%.3g", it, cand_obj, change, step)
        b, obj = cand, cand_obj
        if change < COEF_TOL:
            return b, it, obj
    raise ConvergenceError(
        f"penalized fit did not converge in {MAX_OUTER_ITER} iterations (objective={obj:.10g})",
        objective=obj, iterations=MAX_OUTER_ITER,
    )


def fit_penalized(data: Dataset, link: LinkFunction, penalty: PenaltyConfig) -> CoefficientVector:
    """Minimize mean NLL + elastic-net penalty; coefficients are returned on the original scale."""
    link = LinkFunction(link)
    if data.n < 2:
        raise InvalidDataError("penalized fit needs at least 2 samples")
    _check_outcomes(data, link)
    design = _prepare(data, penalty.standardize)
    b0 = _null_coefficients(design, link)
    b, iters, obj = _solve(design, link, penalty.lambda_, penalty.mixing, b0)
    beta = _to_original_scale(b, design)
    log.debug("fit n=%d p=%d lambda=%.4g iters=%d objective=%.8g nonzero=%d",
              data.n, data.p, penalty.lambda_, iters, obj, int(np.count_nonzero(beta.slopes)))
    return beta


# ---------- cross-validation ----------

def lambda_max(data: Dataset, link: LinkFunction, mixing: float, standardize: bool = True) -> float:
    """Smallest lambda at which every slope is zero."""
    link = LinkFunction(link)
    _check_outcomes(data, link)
    design = _prepare(data, standardize)
    b = _null_coefficients(design, link)
    mu = link.mean(design.xa @ b)
    g = design.xa.T @ (mu - design.y) / data.n
    slopes = design.free[design.free > 0]
    if slopes.size == 0:
        return 1.0
    top = float(np.max(np.abs(g[slopes])))
    return top / max(mixing, MIXING_FLOOR) if top > 0 else 1.0


def lambda_grid(data: Dataset, link: LinkFunction, mixing: float, grid_size: int,
                standardize: bool = True) -> np.ndarray:
    """Log-spaced grid, largest first, from lambda_max down by LAMBDA_MIN_RATIO."""
    top = lambda_max(data, link, mixing, standardize)
    if grid_size == 1:
        return np.array([top])
    return top * np.logspace(0.0, np.log10(LAMBDA_MIN_RATIO), grid_size)


def fold_indices(n: int, folds: int, rng_seed: int,
                 labels: np.ndarray | None = None) -> list[tuple[np.ndarray, np.ndarray]]:
    """Shuffled folds, stratified on binary ``labels`` when every class fills each fold."""
    if labels is not None:
        _, counts = np.unique(labels, return_counts=True)
        if counts.size == 2 and counts.min() >= folds:
            skf = StratifiedKFold(n_splits=folds, shuffle=True, random_state=rng_seed)
            return [(train, test) for train, test in skf.split(np.zeros((n, 1)), labels)]
    kf = KFold(n_splits=folds, shuffle=True, random_state=rng_seed)
    return [(train, test) for train, test in kf.split(np.arange(n))]


def _path_losses(train: Dataset, test: Dataset, link: LinkFunction, grid: np.ndarray,
                 mixing: float, standardize: bool) -> np.ndarray:
    design = _prepare(train, standardize)
    b = _null_coefficients(design, link)
    losses = np.empty(grid.shape[0])
    for k, lam in enumerate(grid):
        b, _, _ = _solve(design, link, float(lam), mixing, b)
        beta = _to_original_scale(b, design)
        losses[k] = _mean_nll(_linear_predictor(beta, test), test.outcomes, link)
    return losses


def cross_validate_lambda(data: Dataset, link: LinkFunction, mixing: float = 1.0, folds: int = 5,
                          grid_size: int = 30, rng_seed: int = 0,
                          standardize: bool = True) -> PenaltyConfig:
    """
    Pick lambda on a warm-started path by mean held-out NLL.
    Ties go to the larger lambda.
    """
    link = LinkFunction(link)
    if folds < 2 or data.n < folds:
        raise InvalidDataError(f"cross-validation needs folds >= 2 and n >= folds (n={data.n}, folds={folds})")
    _check_outcomes(data, link)
    if link is LinkFunction.LOGISTIC and np.unique(data.outcomes).size < 2:
        raise InvalidDataError("degenerate outcome vector: all outcomes are identical")

    grid = lambda_grid(data, link, mixing, grid_size, standardize)
    losses = np.zeros(grid.shape[0])
    labels = data.outcomes if link is LinkFunction.LOGISTIC else None
    for train_idx, test_idx in fold_indices(data.n, folds, rng_seed, labels):
        losses += _path_losses(data.subset(train_idx), data.subset(test_idx), link, grid, mixing, standardize)
    losses /= folds
    best = int(np.argmin(losses))
    log.debug("cv n=%d folds=%d grid=[%.4g..%.4g] best_index=%d lambda=%.4g loss=%.6g",
              data.n, folds, grid[0], grid[-1], best, grid[best], losses[best])
    return PenaltyConfig(lambda_=float(grid[best]), mixing=mixing, standardize=standardize)


def fit_with_policy(data: Dataset, link: LinkFunction, policy: PenaltyPolicy, rng_seed: int) -> CoefficientVector:
    """Cross-validate lambda under ``policy`` and refit on all of ``data``."""
    penalty = cross_validate_lambda(
        data, link, mixing=policy.mixing, folds=policy.folds, grid_size=policy.grid_size,
        rng_seed=rng_seed, standardize=policy.standardize,
    )
    return fit_penalized(data, link, penalty)
