"""
Euclidean projection onto the probability simplex and a projected-gradient
minimizer for smooth convex functions over it.

    S = {x in R^K | x >= 0, sum(x) = 1}
"""
import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

log = logging.getLogger("simplex")

MAX_ITER = 5_000
STEP_TOL = 1e-10
ARMIJO_C = 1e-4
BACKTRACK = 0.5
MIN_STEP = 1e-20
MAX_STEP = 1e10


def project_onto_simplex(y: np.ndarray) -> np.ndarray:
    """Sort-and-threshold projection: argmin_x 0.5||y - x||^2 s.t. x in S."""
    y = np.asarray(y, dtype=float)
    u = np.sort(y)[::-1]
    thresholds = (np.cumsum(u) - 1.0) / np.arange(1, y.shape[0] + 1)
    k = np.nonzero(thresholds < u)[0][-1]
    x = np.clip(y - thresholds[k], 0.0, None)
    # renormalize away the rounding left by the subtraction
    return x / x.sum()


@dataclass(frozen=True)
class SimplexSolution:
    weights: np.ndarray
    objective: float
    iterations: int
    converged: bool


def minimize_on_simplex(
    objective: Callable[[np.ndarray], float],
    grad: Callable[[np.ndarray], np.ndarray],
    size: int,
    x0: np.ndarray | None = None,
    max_iter: int = MAX_ITER,
    tol: float = STEP_TOL,
) -> SimplexSolution:
    """
    Projected gradient descent with Armijo backtracking along the projection arc.
    Starts from the uniform vector unless ``x0`` is given, so degenerate problems
    resolve to the same minimizer every time.
    """
    x = np.full(size, 1.0 / size) if x0 is None else project_onto_simplex(x0)
    if size == 1:
        return SimplexSolution(x, float(objective(x)), 0, True)

    f = float(objective(x))
    t = 1.0
    for it in range(1, max_iter + 1):
        g = grad(x)
        while True:
            x_new = project_onto_simplex(x - t * g)
            f_new = float(objective(x_new))
            if f_new <= f + ARMIJO_C * float(g @ (x_new - x)):
                break
            t *= BACKTRACK
            if t < MIN_STEP:
                # no representable decrease left
                return SimplexSolution(x, f, it, True)
        step = float(np.linalg.norm(x_new - x))
        x, f = x_new, f_new
        if step < tol:
            return SimplexSolution(x, f, it, True)
        t = min(t / BACKTRACK, MAX_STEP)
    log.debug("projected gradient stopped at max_iter=%d objective=%.12g", max_iter, f)
    return SimplexSolution(x, f, max_iter, False)


def stationarity_residual(weights: np.ndarray, g: np.ndarray, support_tol: float = 1e-12) -> float:
    """
    KKT residual of min f over S at ``weights`` given gradient ``g``:
    gradient entries on the support must be equal (to the multiplier nu), and
    entries off the support must not fall below nu.
    """
    support = weights > support_tol
    nu = float(np.mean(g[support]))
    on = float(np.max(np.abs(g[support] - nu)))
    off = float(np.max(np.clip(nu - g[~support], 0.0, None))) if np.any(~support) else 0.0
    return max(on, off)
