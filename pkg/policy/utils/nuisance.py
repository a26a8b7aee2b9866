"""
Nuisance bundle: outcome, cost and propensity regressions plus the
V-conditional contrasts, and the fold-split estimate of xi.

Truncation of the propensity and flooring of the cost contrasts happen when
the bundle is evaluated, never inside the fits, so ``validate_conditions``
can count how often the guards bite.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
from joblib import Parallel, delayed
from sklearn.model_selection import KFold

from ..exceptions import LearnerError
from ..models import Basis, LearnerKind, NuisanceTarget
from .data import Dataset, ProblemConfig
from .learners import FittedRegression, LearnerSpec, fit

logger = logging.getLogger(__name__)

DEFAULT_CONTRAST_SPEC = LearnerSpec(kind=LearnerKind.LINEAR, basis=Basis.MAIN)


def _with_treatment(t, w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.ndim == 1:
        w = w.reshape(-1, 1)
    t = np.broadcast_to(np.asarray(t, dtype=float), (w.shape[0],))
    return np.column_stack([t, w])


@dataclass(frozen=True, eq=False)
class NuisanceBundle:
    mu_y: FittedRegression
    mu_c: FittedRegression
    mu_t: Optional[FittedRegression]
    delta_y_fit: Optional[FittedRegression]
    delta_c_fit: Optional[FittedRegression]
    v_index: tuple
    eps_t: float = 0.01
    eps_c: float = 1e-3

    @property
    def identity_v(self) -> bool:
        return self.delta_y_fit is None

    def mu_y_at(self, t, w) -> np.ndarray:
        return self.mu_y.predict(_with_treatment(t, w))

    def mu_c_at(self, t, w) -> np.ndarray:
        return self.mu_c.predict(_with_treatment(t, w))

    def propensity_raw(self, w) -> np.ndarray:
        if self.mu_t is None:
            raise LearnerError("bundle was fit without a propensity model")
        return self.mu_t.predict(w)

    def propensity(self, w) -> np.ndarray:
        return np.clip(self.propensity_raw(w), self.eps_t, 1.0 - self.eps_t)

    def contrast_y(self, w) -> np.ndarray:
        return self.mu_y_at(1.0, w) - self.mu_y_at(0.0, w)

    def contrast_c_raw(self, w) -> np.ndarray:
        return self.mu_c_at(1.0, w) - self.mu_c_at(0.0, w)

    def contrast_c(self, w) -> np.ndarray:
        return np.maximum(self.contrast_c_raw(w), self.eps_c)

    def _w_from_v(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.ndim == 1:
            v = v.reshape(-1, 1)
        return v[:, np.argsort(self.v_index)]

    def delta_y(self, v) -> np.ndarray:
        if self.identity_v:
            return self.contrast_y(self._w_from_v(v))
        return self.delta_y_fit.predict(v)

    def delta_c_raw(self, v) -> np.ndarray:
        if self.identity_v:
            return self.contrast_c_raw(self._w_from_v(v))
        return self.delta_c_fit.predict(v)

    def delta_c(self, v) -> np.ndarray:
        return np.maximum(self.delta_c_raw(v), self.eps_c)

    def xi(self, v) -> np.ndarray:
        return self.delta_y(v) / self.delta_c(v)


@dataclass(frozen=True, eq=False)
class ArmPredictions:
    """A regression of (T, W) evaluated at t = 1 and t = 0 for every observation."""

    at1: np.ndarray
    at0: np.ndarray
    floor: Optional[float] = None

    def observed(self, t) -> np.ndarray:
        return np.where(np.asarray(t) == 1, self.at1, self.at0)

    @property
    def contrast(self) -> np.ndarray:
        raw = self.at1 - self.at0
        return raw if self.floor is None else np.maximum(raw, self.floor)


@dataclass(frozen=True, eq=False)
class SampleNuisances:
    """The bundle evaluated once on the observed sample.

    ``mu_t`` is truncated, ``contrast_c`` is floored at eps_c and ``xi`` is
    whichever benefit-to-cost estimate the caller chose (full-sample or
    cross-fit).
    """

    t: np.ndarray
    c: np.ndarray
    y: np.ndarray
    mu_y1: np.ndarray
    mu_y0: np.ndarray
    mu_c1: np.ndarray
    mu_c0: np.ndarray
    mu_t: np.ndarray
    contrast_c: np.ndarray
    xi: np.ndarray
    eps_c: float = 1e-3

    @classmethod
    def evaluate(cls, ds: Dataset, nb: NuisanceBundle, xi: Optional[np.ndarray] = None) -> "SampleNuisances":
        return cls(
            t=ds.t, c=ds.c, y=ds.y,
            mu_y1=nb.mu_y_at(1.0, ds.w), mu_y0=nb.mu_y_at(0.0, ds.w),
            mu_c1=nb.mu_c_at(1.0, ds.w), mu_c0=nb.mu_c_at(0.0, ds.w),
            mu_t=nb.propensity(ds.w), contrast_c=nb.contrast_c(ds.w),
            xi=nb.xi(ds.v) if xi is None else np.asarray(xi, dtype=float),
            eps_c=nb.eps_c,
        )

    @property
    def n(self) -> int:
        return self.t.shape[0]

    @property
    def mu_y_obs(self) -> np.ndarray:
        return np.where(self.t == 1, self.mu_y1, self.mu_y0)

    @property
    def mu_c_obs(self) -> np.ndarray:
        return np.where(self.t == 1, self.mu_c1, self.mu_c0)

    @property
    def contrast_y(self) -> np.ndarray:
        return self.mu_y1 - self.mu_y0

    @property
    def mu_y(self) -> ArmPredictions:
        return ArmPredictions(self.mu_y1, self.mu_y0)

    @property
    def mu_c(self) -> ArmPredictions:
        """Initial cost regression; its contrast is the floored Delta^C used by the knapsack."""
        return ArmPredictions(self.mu_c1, self.mu_c0, floor=self.eps_c)

    @property
    def inverse_weight(self) -> np.ndarray:
        """1 / (T + mu^T(W) - 1): 1/mu^T for treated, -1/(1 - mu^T) for controls."""
        return 1.0 / (self.t + self.mu_t - 1.0)

    @property
    def cost_residual(self) -> np.ndarray:
        """Weighted cost residual (C - mu^C(T, W)) / (T + mu^T(W) - 1)."""
        return (self.c - self.mu_c_obs) * self.inverse_weight


def _spec(specs: Dict[str, LearnerSpec], target: str, default: Optional[LearnerSpec] = None) -> LearnerSpec:
    spec = specs.get(target, specs.get(str(target), default))
    if spec is None:
        raise LearnerError(f"no learner configured for {target}")
    return spec.for_target(target) if spec.target is None else spec


def _fit_outcome_models(ds: Dataset, specs):
    tw = _with_treatment(ds.t, ds.w)
    mu_y = fit(_spec(specs, NuisanceTarget.MU_Y), tw, ds.y)
    mu_c = fit(_spec(specs, NuisanceTarget.MU_C), tw, ds.c)
    return mu_y, mu_c


def _fit_contrasts(ds: Dataset, specs, mu_y: FittedRegression, mu_c: FittedRegression):
    if ds.v_is_w:
        return None, None
    spec_y = _spec(specs, NuisanceTarget.DELTA_Y, DEFAULT_CONTRAST_SPEC)
    spec_c = _spec(specs, NuisanceTarget.DELTA_C, DEFAULT_CONTRAST_SPEC)
    if LearnerKind.ORACLE in (spec_y.kind, spec_c.kind):
        raise LearnerError("oracle contrasts exist only when every covariate is a decision covariate")
    pseudo_y = mu_y.predict(_with_treatment(1.0, ds.w)) - mu_y.predict(_with_treatment(0.0, ds.w))
    pseudo_c = mu_c.predict(_with_treatment(1.0, ds.w)) - mu_c.predict(_with_treatment(0.0, ds.w))
    return fit(spec_y, ds.v, pseudo_y), fit(spec_c, ds.v, pseudo_c)


def fit_bundle(ds: Dataset, specs: Dict[str, LearnerSpec], cfg: ProblemConfig) -> NuisanceBundle:
    """Fit mu^Y and mu^C on (T, W), mu^T on W, and regress the contrasts on V.

    When V(W) = W the contrasts are the differences of the outcome and cost
    regressions themselves, with no extra fit.
    """
    mu_y, mu_c = _fit_outcome_models(ds, specs)
    mu_t = fit(_spec(specs, NuisanceTarget.MU_T), ds.w, ds.t)
    delta_y_fit, delta_c_fit = _fit_contrasts(ds, specs, mu_y, mu_c)
    return NuisanceBundle(
        mu_y=mu_y, mu_c=mu_c, mu_t=mu_t, delta_y_fit=delta_y_fit, delta_c_fit=delta_c_fit,
        v_index=ds.v_index, eps_t=cfg.eps_t, eps_c=cfg.eps_c,
    )


@dataclass(frozen=True, eq=False)
class CrossFitPlan:
    folds: np.ndarray

    @property
    def n_folds(self) -> int:
        return int(self.folds.max()) + 1

    @classmethod
    def split(cls, n: int, n_folds: int, seed: int) -> "CrossFitPlan":
        """Seeded random partition into folds whose sizes differ by at most one."""
        if n_folds == 1:
            return cls(folds=np.zeros(n, dtype=int))
        if n_folds > n:
            raise LearnerError(f"cannot split {n} observations into {n_folds} folds")
        assignment = np.empty(n, dtype=int)
        splitter = KFold(n_splits=n_folds, shuffle=True, random_state=seed % (2 ** 32))
        for fold, (_, test) in enumerate(splitter.split(np.arange(n))):
            assignment[test] = fold
        return cls(folds=assignment)

    def test_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.folds == fold)

    def train_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.folds != fold)

    def sizes(self):
        return np.bincount(self.folds)


def _fold_xi(ds: Dataset, specs, cfg: ProblemConfig, plan: CrossFitPlan, fold: int):
    train, test = plan.train_rows(fold), plan.test_rows(fold)
    try:
        bundle = fit_bundle_for_contrasts(ds.subset(train), specs, cfg)
    except LearnerError as exc:
        raise LearnerError(f"fold {fold + 1} of {plan.n_folds} ({len(train)} training rows): {exc}") from exc
    return test, bundle.xi(ds.v[test])


def fit_bundle_for_contrasts(ds: Dataset, specs, cfg: ProblemConfig) -> NuisanceBundle:
    """Outcome/cost regressions and contrasts only, without a propensity model."""
    mu_y, mu_c = _fit_outcome_models(ds, specs)
    delta_y_fit, delta_c_fit = _fit_contrasts(ds, specs, mu_y, mu_c)
    return NuisanceBundle(
        mu_y=mu_y, mu_c=mu_c, mu_t=None, delta_y_fit=delta_y_fit, delta_c_fit=delta_c_fit,
        v_index=ds.v_index, eps_t=cfg.eps_t, eps_c=cfg.eps_c,
    )


def cross_fit_xi(ds: Dataset, specs: Dict[str, LearnerSpec], plan: CrossFitPlan, cfg: ProblemConfig,
                 bundle: Optional[NuisanceBundle] = None, n_jobs: int = 1) -> np.ndarray:
    """xi_i from contrasts fit without observation i's fold.

    Each fold refits mu^Y and mu^C on the other folds, forms the contrast
    pseudo-outcomes there, and evaluates delta^Y / max(delta^C, eps_c) on
    the held-out rows. With a single fold this is the full-sample xi.
    """
    if plan.n_folds == 1:
        bundle = bundle or fit_bundle_for_contrasts(ds, specs, cfg)
        return bundle.xi(ds.v)

    xi = np.empty(ds.n)
    results = Parallel(n_jobs=n_jobs)(
        delayed(_fold_xi)(ds, specs, cfg, plan, fold) for fold in range(plan.n_folds)
    )
    for test, values in results:
        xi[test] = values
    logger.debug(f"Cross-fit xi over {plan.n_folds} folds (sizes {plan.sizes().tolist()})")
    return xi
