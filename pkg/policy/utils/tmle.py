"""
Targeted outcome regression, the plug-in ATE and its influence function.

Gradients are evaluated for the whole sample at once; each function returns
one value per observation.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ..exceptions import EstimationError
from ..models import ReferenceKind
from .data import ProblemConfig
from .knapsack import KnapsackFit
from .learners import Fluctuation, fit_fluctuation
from .nuisance import ArmPredictions, SampleNuisances
from .reference import ReferenceFit

logger = logging.getLogger(__name__)

Z_975 = 1.959963984540054


@dataclass(frozen=True, eq=False)
class TargetedOutcome:
    fluctuation: Fluctuation
    predictions: ArmPredictions
    clever: np.ndarray
    score: float

    @property
    def epsilon(self) -> float:
        return self.fluctuation.epsilon


def target_outcome_regression(sample: SampleNuisances, rho, rho_ref, cfg: Optional[ProblemConfig] = None) -> TargetedOutcome:
    """Fluctuate mu^Y along H_i = (rho_i - rho^R_i) / (T_i + mu^T(W_i) - 1).

    When the two rules agree everywhere the clever covariate vanishes and the
    initial fit is returned unchanged.
    """
    bounds = cfg.y_bounds if cfg is not None else None
    diff = np.asarray(rho, dtype=float) - np.asarray(rho_ref, dtype=float)
    clever = diff * sample.inverse_weight
    fluctuation = fit_fluctuation(sample.y, sample.mu_y_obs, clever, bounds=bounds)
    predictions = ArmPredictions(
        at1=fluctuation.apply(sample.mu_y1, diff / sample.mu_t),
        at0=fluctuation.apply(sample.mu_y0, -diff / (1.0 - sample.mu_t)),
    )
    score = float(np.sum(clever * (sample.y - predictions.observed(sample.t))))
    return TargetedOutcome(fluctuation=fluctuation, predictions=predictions, clever=clever, score=score)


@dataclass(frozen=True, eq=False)
class GradientContext:
    t: np.ndarray
    c: np.ndarray
    y: np.ndarray
    mu_t: np.ndarray
    mu_y: ArmPredictions
    mu_c: ArmPredictions
    rho: np.ndarray
    tau: float
    phi_n: float
    kappa: float
    alpha: float
    reference: Optional[ReferenceFit] = None

    @classmethod
    def build(cls, sample: SampleNuisances, targeted: TargetedOutcome, knapsack: KnapsackFit,
              reference: ReferenceFit, cfg: ProblemConfig) -> "GradientContext":
        return cls(
            t=sample.t, c=sample.c, y=sample.y, mu_t=sample.mu_t,
            mu_y=targeted.predictions, mu_c=sample.mu_c,
            rho=knapsack.rule.evaluate(sample.n), tau=max(knapsack.rule.eta, 0.0),
            phi_n=knapsack.phi_n, kappa=cfg.kappa, alpha=cfg.alpha, reference=reference,
        )

    @property
    def n(self) -> int:
        return self.t.shape[0]

    @property
    def inverse_weight(self) -> np.ndarray:
        return 1.0 / (self.t + self.mu_t - 1.0)

    @property
    def rho_ref(self) -> np.ndarray:
        return self.reference.evaluate(self.n)

    def psi(self, rho) -> float:
        """Plug-in value E_n[rho(V) Delta^Y(W)] under the targeted outcome fit."""
        return float(np.mean(np.asarray(rho) * self.mu_y.contrast))


def eval_D(ctx: GradientContext, rho, tau: float, cost: ArmPredictions, psi: Optional[float] = None) -> np.ndarray:
    rho = np.broadcast_to(np.asarray(rho, dtype=float), (ctx.n,))
    h = ctx.inverse_weight
    psi = ctx.psi(rho) if psi is None else psi
    value = rho * ((ctx.y - ctx.mu_y.observed(ctx.t)) * h + ctx.mu_y.contrast) - psi
    if tau > 0:
        resource = rho * ((ctx.c - cost.observed(ctx.t)) * h + cost.contrast)
        resource = resource + ctx.alpha * ((1.0 - ctx.t) * (ctx.c - cost.at0) / (1.0 - ctx.mu_t) + cost.at0)
        value = value - tau * (resource - ctx.kappa)
    return value


def eval_D1(ctx: GradientContext, cost: ArmPredictions) -> np.ndarray:
    return (1.0 - ctx.t) * (ctx.c - cost.at0) / (1.0 - ctx.mu_t) + cost.at0 - np.mean(cost.at0)


def eval_D2(ctx: GradientContext, cost: ArmPredictions) -> np.ndarray:
    contrast = cost.contrast
    return (ctx.c - cost.observed(ctx.t)) * ctx.inverse_weight + contrast - np.mean(contrast)


def eval_G(ctx: GradientContext) -> np.ndarray:
    return eval_D(ctx, ctx.rho, ctx.tau, ctx.mu_c)


def eval_G_reference(kind: str, ctx: GradientContext) -> np.ndarray:
    kind = ReferenceKind(kind)
    if kind == ReferenceKind.FR:
        return eval_D(ctx, ctx.rho_ref, 0.0, ctx.mu_c)

    if kind == ReferenceKind.TP:
        residual = ctx.y - ctx.mu_y.observed(ctx.t)
        return ctx.mu_t * ctx.inverse_weight * residual + ctx.t * ctx.mu_y.contrast - ctx.psi(ctx.mu_t)

    if math.isinf(ctx.kappa):
        raise EstimationError("RD reference has no influence function without a finite budget")
    reference = ctx.reference
    rho_rd = ctx.rho_ref
    value = eval_D(ctx, rho_rd, 0.0, ctx.mu_c)
    if reference.saturating:
        psi_rd = ctx.psi(rho_rd)
        value = value - ctx.alpha * psi_rd * eval_D1(ctx, ctx.mu_c) / (ctx.kappa - ctx.alpha * ctx.phi_n)
        targeted = reference.targeted_cost
        value = value - psi_rd * eval_D2(ctx, targeted.predictions) / targeted.mean_contrast
    return value


def eval_D_reference(kind: str, ctx: GradientContext) -> np.ndarray:
    """D_R = G - G_R evaluated at every observation."""
    return eval_G(ctx) - eval_G_reference(kind, ctx)


def estimate_ate(ctx: GradientContext) -> float:
    return float(np.mean((ctx.rho - ctx.rho_ref) * ctx.mu_y.contrast))


@dataclass(frozen=True, eq=False)
class AteEstimate:
    reference: str
    psi: float
    sigma: float
    n: int
    if_values: np.ndarray

    @property
    def standard_error(self) -> float:
        return self.sigma / math.sqrt(self.n)

    @property
    def ci_95(self) -> Tuple[float, float]:
        half = Z_975 * self.standard_error
        return self.psi - half, self.psi + half

    @property
    def lower_975(self) -> float:
        return self.psi - Z_975 * self.standard_error

    @property
    def scaled_width(self) -> float:
        lo, hi = self.ci_95
        return math.sqrt(self.n) * (hi - lo)

    def to_dict(self) -> dict:
        lo, hi = self.ci_95
        return {
            "reference": str(self.reference),
            "psi": self.psi,
            "sigma": self.sigma,
            "n": self.n,
            "ci95": [lo, hi],
            "lower975": self.lower_975,
            "scaled_width": self.scaled_width,
        }


def infer(if_values, psi: float, reference: str = "") -> AteEstimate:
    """Wald interval from the sample standard deviation of the influence values."""
    if_values = np.asarray(if_values, dtype=float)
    n = if_values.shape[0]
    if n < 2:
        raise EstimationError(f"variance needs at least 2 observations, got {n}")
    sigma = float(np.std(if_values, ddof=1))
    return AteEstimate(reference=reference, psi=float(psi), sigma=sigma, n=n, if_values=if_values)
