"""
Drift-robust aggregation of period-specific GLMs.

Steps, given historical source datasets and a current target dataset:

1. fit every source and the estimation half D1 of the target;
2. build the bank B = [target, sources...] and the uncertainty set
   C(tau) = {B g : g on the simplex, NLL(B g; D2) <= tau} on the held-out half D2,
   with tau the average held-out loss of the target fit and of the best source mix;
3. project the anchor onto C(tau) in the Hessian metric:
   argmin_{b in C(tau)} (anchor - b)' H(anchor) (anchor - b).

The maximin baseline is step 3 with a zero anchor and no likelihood constraint.
"""
import logging
import math
from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from .domain import (
    CoefficientVector,
    Dataset,
    LinkFunction,
    ModelBank,
    PenaltyPolicy,
    SimplexWeights,
)
from .errors import DimensionMismatchError, InfeasibleSetError, InvalidConfigError, InvalidDataError
from .glm import _augment, _check_outcomes, _mean_nll, fit_with_policy, hessian, negative_log_likelihood
from .rng import CURRENT, FIT, HISTORICAL, SHUFFLE, derive_seed
from .sampling import split_target
from .simplex import minimize_on_simplex, stationarity_residual

log = logging.getLogger("adapt")

HESSIAN_RIDGE = 1e-8
FEASIBILITY_TOL = 1e-9
CONSTRAINT_TOL = 1e-6
SLACKNESS_TOL = 1e-9
BISECTION_SOLVE_TOL = 1e-13
MU_START = 1.0
MU_CAP = 1e12
MAX_BISECTION = 200
MIN_TARGET_SIZE = 20


class Anchor(str, Enum):
    TARGET = "target"
    ZERO = "zero"
    SOURCES = "sources"


class BankKind(str, Enum):
    FULL = "full"
    SOURCES = "sources"


class UncertaintySet(BaseModel):
    """
    Simplex combinations of the bank whose held-out mean NLL stays within tau.

    ``eval_data`` is the held-out half D2 and is required for any finite tau;
    only the unconstrained set (tau = inf, the maximin case) may omit it.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    bank: ModelBank
    tau: float
    eval_data: Dataset | None = None
    link: LinkFunction = LinkFunction.LOGISTIC

    @model_validator(mode="after")
    def _check(self):
        if not self.tau >= 0:
            raise ValueError("tau must be >= 0")
        if math.isfinite(self.tau) and self.eval_data is None:
            raise ValueError("a finite tau needs held-out evaluation data")
        if self.eval_data is not None and self.eval_data.p != self.bank.p:
            raise ValueError("evaluation data and bank disagree on dimension")
        return self

    @classmethod
    def unconstrained(cls, bank: ModelBank) -> "UncertaintySet":
        """C(inf): the whole simplex, no held-out data involved."""
        return cls(bank=bank, tau=math.inf)

    @property
    def constrained(self) -> bool:
        return math.isfinite(self.tau)

    def loss(self, weights: SimplexWeights) -> float:
        return negative_log_likelihood(combine(self.bank, weights), self.eval_data, self.link)

    def contains(self, weights: SimplexWeights) -> bool:
        if weights.size != self.bank.width:
            return False
        return not self.constrained or self.loss(weights) <= self.tau + FEASIBILITY_TOL


class AdaptDiagnostics(BaseModel):
    objective: float
    tau: float
    constraint_value: float | None = None
    constraint_slack: float | None = None
    mu: float = 0.0
    iterations: int = 0
    bisection_steps: int = 0
    kkt_residual: float = 0.0
    complementary_slackness: float = 0.0
    zero_weights: list[int] = []
    likelihood_active: bool = False
    converged: bool = True
    solution_source: str = "solver"


class AdaptResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    beta: CoefficientVector
    weights: SimplexWeights
    tau: float
    bank: ModelBank
    anchor: CoefficientVector
    diagnostics: AdaptDiagnostics
    beta_tilde: CoefficientVector | None = None
    gamma_tilde: SimplexWeights | None = None


def combine(bank: ModelBank, weights: SimplexWeights) -> CoefficientVector:
    """B gamma, intercept included."""
    if weights.size != bank.width:
        raise DimensionMismatchError(f"{weights.size} weights for a bank of width {bank.width}")
    return CoefficientVector.from_array(bank.matrix @ weights.gamma)


class _HeldOutLoss:
    """Mean NLL of B gamma on fixed data, evaluated through the n x K matrix X~B."""

    def __init__(self, bank_matrix: np.ndarray, data: Dataset, link: LinkFunction):
        _check_outcomes(data, link)
        self.xb = _augment(data.features) @ bank_matrix
        self.y = data.outcomes
        self.link = link

    def value(self, gamma: np.ndarray) -> float:
        return _mean_nll(self.xb @ gamma, self.y, self.link)

    def grad(self, gamma: np.ndarray) -> np.ndarray:
        mu = self.link.mean(self.xb @ gamma)
        return self.xb.T @ (mu - self.y) / self.y.shape[0]


class _Projection:
    """(anchor - B gamma)' (H + ridge I) (anchor - B gamma) as a function of gamma."""

    def __init__(self, bank_matrix: np.ndarray, anchor: np.ndarray, hess: np.ndarray):
        self.b = bank_matrix
        self.anchor = anchor
        self.h = hess + HESSIAN_RIDGE * np.eye(hess.shape[0])

    def value(self, gamma: np.ndarray) -> float:
        d = self.anchor - self.b @ gamma
        return float(d @ (self.h @ d))

    def grad(self, gamma: np.ndarray) -> np.ndarray:
        d = self.anchor - self.b @ gamma
        return -2.0 * self.b.T @ (self.h @ d)


def best_source_combination(source_bank: ModelBank, eval_data: Dataset,
                            link: LinkFunction) -> tuple[SimplexWeights, CoefficientVector]:
    """Simplex weights of the sources minimizing the mean NLL on ``eval_data``."""
    link = LinkFunction(link)
    if source_bank.has_target:
        raise InvalidConfigError("best_source_combination expects a bank of source columns only")
    if source_bank.p != eval_data.p:
        raise DimensionMismatchError("evaluation data and bank disagree on dimension")
    loss = _HeldOutLoss(source_bank.matrix, eval_data, link)
    sol = minimize_on_simplex(loss.value, loss.grad, source_bank.width)
    weights = SimplexWeights(gamma=sol.weights)
    log.debug("best source mix gamma=%s loss=%.8g iters=%d", np.round(sol.weights, 4), sol.objective, sol.iterations)
    return weights, combine(source_bank, weights)


def select_tau(target_est: CoefficientVector, beta_tilde: CoefficientVector, eval_data: Dataset,
               link: LinkFunction) -> float:
    """Average held-out loss of the target fit and the best source combination."""
    return 0.5 * (negative_log_likelihood(target_est, eval_data, link)
                  + negative_log_likelihood(beta_tilde, eval_data, link))


def _check_hessian(hess: np.ndarray, dim: int) -> np.ndarray:
    hess = np.asarray(hess, dtype=float)
    if hess.shape != (dim, dim):
        raise DimensionMismatchError(f"Hessian has shape {hess.shape}, expected {(dim, dim)}")
    if not np.allclose(hess, hess.T, rtol=1e-10, atol=1e-12):
        raise InvalidDataError("Hessian must be symmetric")
    return hess


def _solve_projection(bank: ModelBank, anchor: np.ndarray, hess: np.ndarray,
                      constraint: _HeldOutLoss | None, tau: float,
                      candidates: list[np.ndarray]) -> tuple[np.ndarray, AdaptDiagnostics]:
    """
    Lagrangian bisection: for mu >= 0 minimize Q + mu * L over the simplex and
    bisect mu until mu * (tau - L) <= SLACKNESS_TOL, keeping L <= tau on the upper
    end of the bracket. Feasible candidates (vertices and caller-supplied points)
    replace the solver answer when strictly better.
    """
    quad = _Projection(bank.matrix, anchor, hess)
    width = bank.width
    constrained = constraint is not None and math.isfinite(tau)
    iterations = 0
    converged = True

    def solve(mu: float) -> np.ndarray:
        nonlocal iterations, converged
        if mu == 0.0:
            sol = minimize_on_simplex(quad.value, quad.grad, width)
        else:
            sol = minimize_on_simplex(
                lambda g: quad.value(g) + mu * constraint.value(g),
                lambda g: quad.grad(g) + mu * constraint.grad(g),
                width,
                tol=BISECTION_SOLVE_TOL,
            )
        iterations += sol.iterations
        converged = converged and sol.converged
        return sol.weights

    def feasible(gamma: np.ndarray) -> bool:
        return not constrained or constraint.value(gamma) <= tau + FEASIBILITY_TOL

    def inside(gamma: np.ndarray) -> bool:
        return constraint.value(gamma) <= tau

    gamma: np.ndarray | None = solve(0.0)
    mu, steps = 0.0, 0
    if not feasible(gamma):
        lo, hi = 0.0, MU_START
        gamma = solve(hi)
        while not inside(gamma):
            lo, hi = hi, 2.0 * hi
            if hi > MU_CAP:
                gamma = None
                break
            gamma = solve(hi)
        if gamma is not None:
            while steps < MAX_BISECTION:
                if hi * (tau - constraint.value(gamma)) <= SLACKNESS_TOL or hi - lo <= 1e-14 * hi:
                    break
                steps += 1
                mid = 0.5 * (lo + hi)
                trial = solve(mid)
                if inside(trial):
                    hi, gamma = mid, trial
                else:
                    lo = mid
                log.debug("bisection step=%d mu=%.6g loss=%.12g tau=%.12g", steps, hi, constraint.value(gamma), tau)
            mu = hi

    source = "solver"
    best_value = quad.value(gamma) if gamma is not None else math.inf
    for cand in candidates:
        if feasible(cand):
            value = quad.value(cand)
            if value < best_value:
                gamma, best_value, source = cand, value, "candidate"
    if gamma is None:
        raise InfeasibleSetError(f"no feasible combination found for tau={tau:.10g}")
    # an interior candidate carries no multiplier
    if source == "candidate" and mu > 0.0 and mu * abs(tau - constraint.value(gamma)) > SLACKNESS_TOL:
        mu = 0.0

    total_grad = quad.grad(gamma)
    if mu > 0.0:
        total_grad = total_grad + mu * constraint.grad(gamma)
    loss_value = constraint.value(gamma) if constraint is not None else None
    diagnostics = AdaptDiagnostics(
        objective=best_value,
        tau=tau,
        constraint_value=loss_value,
        constraint_slack=(tau - loss_value) if loss_value is not None and constrained else None,
        mu=mu,
        iterations=iterations,
        bisection_steps=steps,
        kkt_residual=stationarity_residual(gamma, total_grad),
        complementary_slackness=abs(mu * (loss_value - tau)) if mu > 0.0 else 0.0,
        zero_weights=[int(k) for k in np.flatnonzero(gamma == 0.0)],
        likelihood_active=mu > 0.0,
        converged=converged,
        solution_source=source,
    )
    return gamma, diagnostics


def _vertices(width: int) -> list[np.ndarray]:
    return [np.eye(width)[k] for k in range(width)]


def adapt_estimate(uncertainty_set: UncertaintySet, beta_ini: CoefficientVector | None = None,
                   hess: np.ndarray | None = None,
                   extra_candidates: tuple[SimplexWeights, ...] = ()) -> tuple[CoefficientVector, SimplexWeights, AdaptDiagnostics]:
    """
    Project ``beta_ini`` (default: first bank column) onto C(tau) in the metric of ``hess``.
    With tau = inf and a zero anchor this is exactly the maximin estimate.
    """
    bank = uncertainty_set.bank
    anchor = bank.columns[0] if beta_ini is None else beta_ini
    if anchor.p != bank.p:
        raise DimensionMismatchError("anchor and bank disagree on dimension")
    if hess is None:
        raise InvalidConfigError("adapt_estimate needs a Hessian")
    hess = _check_hessian(hess, bank.p + 1)

    constraint = None
    if uncertainty_set.eval_data is not None:
        constraint = _HeldOutLoss(bank.matrix, uncertainty_set.eval_data, uncertainty_set.link)
    candidates = _vertices(bank.width) + [c.gamma for c in extra_candidates if c.size == bank.width]

    gamma, diagnostics = _solve_projection(
        bank, anchor.as_array(), hess, constraint, uncertainty_set.tau, candidates
    )
    weights = SimplexWeights(gamma=gamma)
    log.info("adapt gamma=%s objective=%.6g mu=%.4g tau=%.6g source=%s",
             np.round(gamma, 4).tolist(), diagnostics.objective, diagnostics.mu,
             uncertainty_set.tau, diagnostics.solution_source)
    return combine(bank, weights), weights, diagnostics


def maximin_estimate(source_bank: ModelBank, hess: np.ndarray) -> tuple[CoefficientVector, SimplexWeights]:
    """min over the simplex of gamma' B' H B gamma: zero anchor, no likelihood constraint."""
    beta, weights, _ = adapt_estimate(
        UncertaintySet.unconstrained(source_bank), CoefficientVector.zeros(source_bank.p), hess
    )
    return beta, weights


# ---------- pipeline ----------

def _ordered(sources: list[Dataset]) -> list[tuple[int, Dataset]]:
    """Sources with their bank labels, ascending by period (unlabeled ones keep input order, last)."""
    labeled = [(d.period_label if d.period_label is not None else math.inf, k, d) for k, d in enumerate(sources)]
    labeled.sort(key=lambda t: (t[0], t[1]))
    return [(d.period_label if d.period_label is not None else k + 1, d) for _, k, d in labeled]


def fit_sources(sources: list[Dataset], link: LinkFunction, policy: PenaltyPolicy,
                seed: int) -> ModelBank:
    """Penalized fit per source, CV seed keyed on the source's position in period order."""
    if not sources:
        raise InvalidConfigError("at least one source dataset is required")
    columns, labels = [], []
    for k, (label, data) in enumerate(_ordered(sources)):
        columns.append(fit_with_policy(data, link, policy, derive_seed(seed, FIT, HISTORICAL, k)))
        labels.append(int(label))
    return ModelBank(columns=columns, labels=labels)


def fit_adapt(sources: list[Dataset], target: Dataset, link: LinkFunction = LinkFunction.LOGISTIC,
              split_seed: int = 0, penalty_policy: PenaltyPolicy | None = None,
              anchor: Anchor | str = Anchor.TARGET, bank: BankKind | str = BankKind.FULL,
              tau: float | None = None, split_fraction: float = 0.5) -> AdaptResult:
    """
    Full three-step estimator. ``tau=None`` applies the averaging rule; any other
    value overrides it. When the bank holds sources only and tau is infinite the
    held-out half has no role, so the Hessian uses the whole target.
    """
    link, anchor, bank = LinkFunction(link), Anchor(anchor), BankKind(bank)
    policy = penalty_policy or PenaltyPolicy()
    if not sources:
        raise InvalidConfigError("at least one source dataset is required")
    if target.n < MIN_TARGET_SIZE:
        raise InvalidDataError(f"target needs at least {MIN_TARGET_SIZE} rows to split, got {target.n}")
    if tau is not None and not tau >= 0:
        raise InvalidConfigError("tau must be >= 0")

    source_bank = fit_sources(sources, link, policy, split_seed)
    target_seed = derive_seed(split_seed, FIT, CURRENT)
    use_split = not (bank is BankKind.SOURCES and tau is not None and math.isinf(tau))

    beta_tilde = gamma_tilde = None
    if use_split:
        est_half, held_out = split_target(target, split_fraction, derive_seed(split_seed, SHUFFLE))
        target_est = fit_with_policy(est_half, link, policy, target_seed)
        gamma_tilde, beta_tilde = best_source_combination(source_bank, held_out, link)
        tau_rule = select_tau(target_est, beta_tilde, held_out, link)
        tau_value = tau_rule if tau is None else float(tau)
        if tau is None and min(negative_log_likelihood(target_est, held_out, link),
                               negative_log_likelihood(beta_tilde, held_out, link)) > tau_value + FEASIBILITY_TOL:
            raise InfeasibleSetError("tau rule produced an empty uncertainty set")
        hess_data, eval_data = est_half, held_out
    else:
        target_est = None
        tau_value = math.inf
        hess_data, eval_data = target, None

    if bank is BankKind.FULL:
        model_bank = source_bank.with_target(target_est, target.period_label)
    else:
        model_bank = source_bank

    if anchor is Anchor.TARGET:
        anchor_beta = target_est if target_est is not None else fit_with_policy(target, link, policy, target_seed)
    elif anchor is Anchor.SOURCES:
        if beta_tilde is None:
            gamma_tilde, beta_tilde = best_source_combination(source_bank, target, link)
        anchor_beta = beta_tilde
    else:
        anchor_beta = CoefficientVector.zeros(target.p)

    extras: tuple[SimplexWeights, ...] = ()
    if gamma_tilde is not None:
        if bank is BankKind.FULL:
            extras = (SimplexWeights(gamma=np.concatenate(([0.0], gamma_tilde.gamma))),)
        else:
            extras = (gamma_tilde,)

    hess = hessian(anchor_beta, hess_data, link)
    uset = UncertaintySet(bank=model_bank, tau=tau_value, eval_data=eval_data, link=link)
    beta, weights, diagnostics = adapt_estimate(uset, anchor_beta, hess, extras)
    if uset.constrained and diagnostics.constraint_value > tau_value + CONSTRAINT_TOL:
        raise InfeasibleSetError(
            f"solution violates the held-out constraint ({diagnostics.constraint_value:.10g} > {tau_value:.10g})"
        )
    return AdaptResult(
        beta=beta, weights=weights, tau=tau_value, bank=model_bank, anchor=anchor_beta,
        diagnostics=diagnostics, beta_tilde=beta_tilde, gamma_tilde=gamma_tilde,
    )


def run_adapt_pipeline(sources: list[Dataset], target: Dataset, link: LinkFunction = LinkFunction.LOGISTIC,
                       split_seed: int = 0, penalty_policy: PenaltyPolicy | None = None,
                       **options) -> CoefficientVector:
    return fit_adapt(sources, target, link, split_seed, penalty_policy, **options).beta
