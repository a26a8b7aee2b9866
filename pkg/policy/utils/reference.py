"""Reference rules FR, RD and TP, with the targeted cost regression RD needs."""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..exceptions import EstimationError
from ..models import ReferenceKind
from .data import ProblemConfig
from .knapsack import ConstantRule, PropensityRule, TreatmentRule
from .learners import Fluctuation, fit_fluctuation
from .nuisance import ArmPredictions, SampleNuisances

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TargetedCost:
    fluctuation: Fluctuation
    predictions: ArmPredictions

    @property
    def epsilon(self) -> float:
        return self.fluctuation.epsilon

    @property
    def mean_contrast(self) -> float:
        return float(np.mean(self.predictions.contrast))


def target_cost_regression(sample: SampleNuisances, cfg: Optional[ProblemConfig] = None) -> TargetedCost:
    """Fluctuate both arms of mu^C along H(t, w) = 1 / (t + mu^T(w) - 1).

    Least squares by default; a logistic fluctuation when ``cfg.c_bounds``
    is set. The targeted fit solves sum_i H_i (C_i - mu^C_hat(T_i, W_i)) = 0.
    """
    bounds = cfg.c_bounds if cfg is not None else None
    h_obs = sample.inverse_weight
    fluctuation = fit_fluctuation(sample.c, sample.mu_c_obs, h_obs, bounds=bounds)
    predictions = ArmPredictions(
        at1=fluctuation.apply(sample.mu_c1, 1.0 / sample.mu_t),
        at0=fluctuation.apply(sample.mu_c0, -1.0 / (1.0 - sample.mu_t)),
    )
    logger.debug(f"Targeted cost regression: epsilon={fluctuation.epsilon:.6g} (logistic={bounds is not None})")
    return TargetedCost(fluctuation=fluctuation, predictions=predictions)


@dataclass(frozen=True, eq=False)
class ReferenceFit:
    kind: str
    rule: TreatmentRule
    targeted_cost: Optional[TargetedCost] = None
    rd_value: Optional[float] = None
    saturating: bool = True

    def evaluate(self, n: int) -> np.ndarray:
        return self.rule.evaluate(n)

    def to_dict(self) -> dict:
        payload = {"kind": str(self.kind), "rule": self.rule.to_dict()}
        if self.rd_value is not None:
            payload["rd_value"] = self.rd_value
            payload["mean_targeted_cost_contrast"] = self.targeted_cost.mean_contrast
            payload["cost_epsilon"] = self.targeted_cost.epsilon
        if self.kind == ReferenceKind.TP:
            payload["rule"].pop("rho", None)
        return payload


def rd_constant(kappa: float, alpha: float, phi_n: float, mean_contrast: float) -> float:
    if mean_contrast <= 0:
        raise EstimationError(
            f"RD reference undefined: mean targeted cost contrast {mean_contrast:.6g} is not positive"
        )
    return min(1.0, (kappa - alpha * phi_n) / mean_contrast)


def fit_reference(kind: str, sample: SampleNuisances, phi_n: float, cfg: ProblemConfig) -> ReferenceFit:
    kind = ReferenceKind(kind)
    if kind == ReferenceKind.FR:
        return ReferenceFit(kind=kind, rule=ConstantRule(cfg.fr_value))
    if kind == ReferenceKind.TP:
        return ReferenceFit(kind=kind, rule=PropensityRule(sample.mu_t))

    targeted = target_cost_regression(sample, cfg)
    if cfg.unconstrained:
        return ReferenceFit(kind=kind, rule=ConstantRule(1.0), targeted_cost=targeted, rd_value=1.0, saturating=False)
    rd_value = rd_constant(cfg.kappa, cfg.alpha, phi_n, targeted.mean_contrast)
    saturating = rd_value < 1.0
    if not saturating:
        logger.info("RD reference clamped at 1: budget covers treating everyone")
    return ReferenceFit(kind=kind, rule=ConstantRule(rd_value), targeted_cost=targeted, rd_value=rd_value, saturating=saturating)
