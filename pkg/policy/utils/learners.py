"""
Regression toolkit for nuisance fits: least squares, IRLS logistic and
closed-form oracles for the simulation designs.

Parametric learners build their own design matrix from the raw predictors
(intercept, main effects, or main effects plus pairwise products) so callers
only ever pass raw columns. Oracle learners ignore training data.
"""

import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np
from scipy.special import expit, logit
from sklearn.preprocessing import PolynomialFeatures

from ..exceptions import ConfigurationError, LearnerError
from ..models import Basis, LearnerKind, NuisanceTarget

logger = logging.getLogger(__name__)

COEFFICIENT_CAP = 30.0
RIDGE_JITTER = 1e-10
CONDITION_LIMIT = 1e12

# (dgp, target) -> closure(t, w) returning the analytic conditional mean
_ORACLES: Dict[Tuple[str, str], Callable[[Optional[np.ndarray], np.ndarray], np.ndarray]] = {}


def register_oracle(dgp: str, target: str):
    """Decorator registering a closed-form conditional mean for a DGP."""
    def decorator(func):
        _ORACLES[(str(dgp), str(target))] = func
        return func
    return decorator


def _oracle(dgp: str, target: str):
    # closures live with the generators
    from . import dgp as _dgp  # noqa: F401

    try:
        return _ORACLES[(str(dgp), str(target))]
    except KeyError:
        raise LearnerError(f"no oracle registered for dgp={dgp!r}, target={target!r}") from None


def oracle_predict(dgp: str, target: str, t, w):
    """Analytic conditional mean of ``target`` under ``dgp``.

    ``w`` may be a single covariate vector (returns a float) or an (n, p)
    matrix; ``t`` is ignored for the propensity and broadcast otherwise.
    """
    func = _oracle(dgp, target)
    w = np.asarray(w, dtype=float)
    single = w.ndim < 2
    if single:
        w = w.reshape(1, -1)
    if str(target) == NuisanceTarget.MU_T:
        values = func(None, w)
    else:
        if t is None:
            raise LearnerError(f"oracle target {target} needs a treatment value")
        values = func(np.broadcast_to(np.asarray(t, dtype=float), (w.shape[0],)), w)
    values = np.asarray(values, dtype=float)
    return float(values[0]) if single else values


@dataclass(frozen=True)
class LearnerSpec:
    kind: str = LearnerKind.LOGISTIC
    basis: str = Basis.MAIN
    max_iter: int = 100
    tol: float = 1e-10
    dgp: Optional[str] = None
    target: Optional[str] = None

    def __post_init__(self):
        if self.kind not in LearnerKind.values:
            raise ConfigurationError("unknown learner kind %(kind)r", code="learner", params={"kind": self.kind})
        if self.basis not in Basis.values:
            raise ConfigurationError("unknown regression basis %(basis)r", code="learner", params={"basis": self.basis})
        if int(self.max_iter) < 1 or not self.tol > 0:
            raise ConfigurationError("max_iter must be positive and tol > 0", code="learner")
        if self.kind == LearnerKind.ORACLE and (self.dgp is None or self.target is None):
            raise ConfigurationError("oracle learners need both dgp and target", code="learner")

    @classmethod
    def from_dict(cls, payload: Dict[str, Any], target: Optional[str] = None) -> "LearnerSpec":
        return cls(
            kind=payload.get("kind", LearnerKind.LOGISTIC),
            basis=payload.get("basis", Basis.MAIN),
            max_iter=int(payload.get("max_iter", 100)),
            tol=float(payload.get("tol", 1e-10)),
            dgp=payload.get("dgp"),
            target=payload.get("target", target),
        )

    def for_target(self, target: str) -> "LearnerSpec":
        return LearnerSpec(self.kind, self.basis, self.max_iter, self.tol, self.dgp, str(target))


def design_matrix(x: np.ndarray, basis: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    ones = np.ones((x.shape[0], 1))
    if basis == Basis.INTERCEPT:
        return ones
    if basis == Basis.PAIRWISE and x.shape[1] > 1:
        x = PolynomialFeatures(degree=2, interaction_only=True, include_bias=False).fit_transform(x)
    return np.hstack([ones, x])


class FittedRegression:
    def predict(self, x) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class LinearFit(FittedRegression):
    coef: np.ndarray
    basis: str

    def predict(self, x) -> np.ndarray:
        return design_matrix(x, self.basis) @ self.coef


@dataclass(frozen=True)
class LogisticFit(FittedRegression):
    coef: np.ndarray
    basis: str
    iterations: int = 0
    capped: bool = False

    def predict(self, x) -> np.ndarray:
        return expit(design_matrix(x, self.basis) @ self.coef)


@dataclass(frozen=True)
class OracleFit(FittedRegression):
    dgp: str
    target: str

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(1, -1)
        if self.target == NuisanceTarget.MU_T:
            return oracle_predict(self.dgp, self.target, None, x)
        return oracle_predict(self.dgp, self.target, x[:, 0], x[:, 1:])


def least_squares(design: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Normal-equation solve, adding ridge jitter when the Gram matrix is singular."""
    gram = design.T @ design
    if np.linalg.cond(gram) > CONDITION_LIMIT:
        gram = gram + RIDGE_JITTER * np.eye(gram.shape[0])
    try:
        return np.linalg.solve(gram, design.T @ y)
    except np.linalg.LinAlgError as exc:
        raise LearnerError(f"least-squares solve failed: {exc}") from exc


@dataclass
class IrlsResult:
    coef: np.ndarray
    iterations: int
    capped: bool = False


def irls_logistic(design: np.ndarray, y: np.ndarray, offset: Optional[np.ndarray] = None,
                  max_iter: int = 100, tol: float = 1e-10) -> IrlsResult:
    """Newton-Raphson / IRLS for the Bernoulli log-likelihood with an optional offset.

    ``y`` may be fractional in [0, 1] (quasi-binomial). Stops once the largest
    coefficient step is below ``tol``. Coefficients past +/-30 on the logit
    scale are capped and the fit is returned with ``capped`` set.
    """
    n, k = design.shape
    offset = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    beta = np.zeros(k)
    capped = False
    iteration = 0
    for iteration in range(1, max_iter + 1):
        p = expit(design @ beta + offset)
        weights = p * (1.0 - p)
        hessian = design.T @ (design * weights[:, None]) + RIDGE_JITTER * np.eye(k)
        score = design.T @ (y - p)
        try:
            step = np.linalg.solve(hessian, score)
        except np.linalg.LinAlgError as exc:
            raise LearnerError(f"IRLS Hessian is singular: {exc}") from exc
        beta = beta + step
        if np.any(np.abs(beta) > COEFFICIENT_CAP):
            beta = np.clip(beta, -COEFFICIENT_CAP, COEFFICIENT_CAP)
            capped = True
            logger.warning(f"IRLS coefficients reached the +/-{COEFFICIENT_CAP:g} cap after {iteration} iterations (separation)")
            break
        if np.max(np.abs(step)) < tol:
            break
    return IrlsResult(coef=beta, iterations=iteration, capped=capped)


BOUND_CLIP = 1e-6


@dataclass(frozen=True)
class Fluctuation:
    """One-parameter submodel through an initial fit along a clever covariate.

    Without bounds the submodel is ``initial + epsilon * clever``; with bounds
    (lo, hi) it moves on the logit scale of the bound-rescaled fit.
    """

    epsilon: float
    bounds: Optional[Tuple[float, float]] = None

    def _scaled_logit(self, values):
        lower, upper = self.bounds
        scaled = np.clip((np.asarray(values, dtype=float) - lower) / (upper - lower), BOUND_CLIP, 1.0 - BOUND_CLIP)
        return logit(scaled)

    def apply(self, initial, clever) -> np.ndarray:
        if self.bounds is None:
            return np.asarray(initial, dtype=float) + self.epsilon * np.asarray(clever, dtype=float)
        lower, upper = self.bounds
        return lower + (upper - lower) * expit(self._scaled_logit(initial) + self.epsilon * np.asarray(clever, dtype=float))


def fit_fluctuation(response, initial, clever, bounds: Optional[Tuple[float, float]] = None,
                    max_iter: int = 100, tol: float = 1e-10) -> Fluctuation:
    """No-intercept regression of ``response`` on ``clever`` with ``initial`` as offset."""
    response = np.asarray(response, dtype=float)
    clever = np.asarray(clever, dtype=float)
    if not np.any(clever):
        return Fluctuation(epsilon=0.0, bounds=bounds)
    if bounds is None:
        return Fluctuation(epsilon=float(np.dot(clever, response - initial) / np.dot(clever, clever)))

    lower, upper = bounds
    scaled = (response - lower) / (upper - lower)
    if scaled.min() < 0 or scaled.max() > 1:
        logger.warning(f"response leaves the configured bounds [{lower}, {upper}]; clipping for the logistic fluctuation")
        scaled = np.clip(scaled, 0.0, 1.0)
    offset = Fluctuation(0.0, bounds)._scaled_logit(initial)
    result = irls_logistic(clever.reshape(-1, 1), scaled, offset=offset, max_iter=max_iter, tol=tol)
    return Fluctuation(epsilon=float(result.coef[0]), bounds=bounds)


def fit(spec: LearnerSpec, x, y) -> FittedRegression:
    if spec.kind == LearnerKind.ORACLE:
        _oracle(spec.dgp, spec.target)
        return OracleFit(dgp=str(spec.dgp), target=str(spec.target))

    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.shape[0] != y.shape[0]:
        raise LearnerError(f"dimension mismatch: {x.shape[0]} predictor rows vs {y.shape[0]} responses")
    design = design_matrix(x, spec.basis)
    if design.shape[0] < design.shape[1]:
        raise LearnerError(f"{design.shape[0]} rows cannot fit {design.shape[1]} coefficients")

    if spec.kind == LearnerKind.LINEAR:
        return LinearFit(coef=least_squares(design, y), basis=spec.basis)

    if y.min() < 0 or y.max() > 1:
        raise LearnerError("logistic learner needs a response in [0, 1]")
    result = irls_logistic(design, y, max_iter=spec.max_iter, tol=spec.tol)
    if result.iterations >= spec.max_iter and not result.capped:
        logger.debug(f"IRLS stopped at max_iter={spec.max_iter} before reaching tol={spec.tol}")
    return LogisticFit(coef=result.coef, basis=spec.basis, iterations=result.iterations, capped=result.capped)
