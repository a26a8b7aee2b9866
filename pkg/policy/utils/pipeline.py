"""
🎯 Policy estimation engine.

Chains nuisance fitting, the knapsack rule, the reference rules and the
targeted ATE estimates for one dataset.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from ..exceptions import EstimationError, InfeasibleBudgetError
from .data import Dataset, ProblemConfig, ValidationReport, validate_conditions
from .knapsack import KnapsackFit, fit_knapsack, one_step_cost
from .learners import LearnerSpec
from .manifest import timed
from .nuisance import CrossFitPlan, SampleNuisances, cross_fit_xi, fit_bundle
from .reference import ReferenceFit, fit_reference
from .tmle import AteEstimate, GradientContext, eval_D_reference, estimate_ate, infer, target_outcome_regression

logger = logging.getLogger(__name__)


@dataclass
class EstimationResult:
    validation: ValidationReport
    knapsack: KnapsackFit
    references: Dict[str, ReferenceFit] = field(default_factory=dict)
    estimates: Dict[str, AteEstimate] = field(default_factory=dict)
    diagnostics: Dict[str, dict] = field(default_factory=dict)
    errors: Dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "rule": self.knapsack.to_dict(),
            "references": {kind: ref.to_dict() for kind, ref in self.references.items()},
            "estimates": [estimate.to_dict() for estimate in self.estimates.values()],
            "diagnostics": self.diagnostics,
            "errors": self.errors,
            "validation": self.validation.to_dict(),
        }


class PolicyEstimator:
    """Estimates the budget-constrained optimal rule and its ATE against each reference."""

    def __init__(self, cfg: ProblemConfig, specs: Dict[str, LearnerSpec], n_jobs: int = 1):
        self.cfg = cfg
        self.specs = specs
        self.n_jobs = n_jobs

    def evaluate_nuisances(self, ds: Dataset):
        """Full-sample nuisance fits and the (possibly fold-split) xi."""
        bundle = fit_bundle(ds, self.specs, self.cfg)
        plan = CrossFitPlan.split(ds.n, self.cfg.folds, self.cfg.seed)
        xi = cross_fit_xi(ds, self.specs, plan, self.cfg, bundle=bundle, n_jobs=self.n_jobs)
        return bundle, SampleNuisances.evaluate(ds, bundle, xi)

    @timed()
    def fit(self, ds: Dataset, strict: bool = False) -> EstimationResult:
        """Run every step; with ``strict`` a failing reference aborts the run."""
        bundle, sample = self.evaluate_nuisances(ds)
        phi_n = one_step_cost(sample.t, sample.c, sample.mu_c0, sample.mu_t)
        report = validate_conditions(ds, self.cfg, bundle, phi_n=phi_n)
        knapsack = fit_knapsack(sample, self.cfg, phi_n)
        result = EstimationResult(validation=report, knapsack=knapsack)

        for kind in self.cfg.references:
            try:
                self._estimate_reference(kind, sample, knapsack, result)
            except InfeasibleBudgetError:
                raise
            except EstimationError as exc:
                if strict:
                    raise
                logger.warning(f"Reference {kind} skipped: {exc}")
                result.errors[str(kind)] = str(exc)
        return result

    def _estimate_reference(self, kind: str, sample: SampleNuisances, knapsack: KnapsackFit, result: EstimationResult):
        n = sample.n
        reference = fit_reference(kind, sample, knapsack.phi_n, self.cfg)
        rho = knapsack.rule.evaluate(n)
        targeted = target_outcome_regression(sample, rho, reference.evaluate(n), self.cfg)
        context = GradientContext.build(sample, targeted, knapsack, reference, self.cfg)
        psi_n = estimate_ate(context)
        estimate = infer(eval_D_reference(kind, context), psi_n, reference=str(kind))

        diagnostics = {
            "outcome_epsilon": targeted.epsilon,
            "outcome_score": targeted.score,
            "outcome_score_per_n": targeted.score / n,
        }
        if reference.targeted_cost is not None:
            predictions = reference.targeted_cost.predictions
            cost_score = float(np.sum(sample.inverse_weight * (sample.c - predictions.observed(sample.t))))
            diagnostics.update({
                "cost_epsilon": reference.targeted_cost.epsilon,
                "cost_score": cost_score,
                "cost_score_per_n": cost_score / n,
            })
        logger.info(f"{kind}: psi_n={psi_n:.6g} sigma_n={estimate.sigma:.6g} ci95={estimate.ci_95}")

        result.references[str(kind)] = reference
        result.estimates[str(kind)] = estimate
        result.diagnostics[str(kind)] = diagnostics


def estimate(ds: Dataset, cfg: ProblemConfig, specs: Dict[str, LearnerSpec], n_jobs: int = 1,
             strict: bool = False) -> EstimationResult:
    return PolicyEstimator(cfg, specs, n_jobs=n_jobs).fit(ds, strict=strict)
