"""
Simulation designs: samplers and the analytic nuisance closures used by the
oracle learner and by the ground-truth computation.

main:       W1 ~ Unif(-1, 1), W2 ~ Bern(0.8), W3 ~ N(0, 1), U ~ Bern(0.5) (unobserved)
            T | W ~ Bern(expit(2.5 W1 + 0.5 W2 W3))
            C | T, W, U ~ Bern(expit(2T - 1 - W1 + 0.2 W2 + 0.7 W3 + 2 W1 W2 + 0.5 U))
            Y | C, W, U ~ Bern(expit(-0.3 C + C W2 - W1 + 0.2 W2 - 0.9 W3 + 0.3 C U))
parametric: W ~ Unif(-1, 1), T | W ~ Bern(expit(W)),
            C | T, W ~ Bern(expit(2T - 1 + W)), Y | T, W ~ Bern(expit(1.4T - 0.7 - 0.3W))
"""

import logging
from dataclasses import dataclass
from typing import Dict

import numpy as np
from scipy.special import expit

from ..models import Basis, DgpKind, LearnerKind, NuisanceTarget
from .data import Dataset, ProblemConfig
from .learners import LearnerSpec, register_oracle

logger = logging.getLogger(__name__)


def _main_cost_logit(t, w):
    w1, w2, w3 = w[:, 0], w[:, 1], w[:, 2]
    return 2.0 * t - 1.0 - w1 + 0.2 * w2 + 0.7 * w3 + 2.0 * w1 * w2


def _main_outcome_prob(c, u, w):
    w1, w2, w3 = w[:, 0], w[:, 1], w[:, 2]
    return expit(-0.3 * c + c * w2 - w1 + 0.2 * w2 - 0.9 * w3 + 0.3 * c * u)


@register_oracle(DgpKind.MAIN, NuisanceTarget.MU_T)
def main_propensity(t, w):
    return expit(2.5 * w[:, 0] + 0.5 * w[:, 1] * w[:, 2])


@register_oracle(DgpKind.MAIN, NuisanceTarget.MU_C)
def main_cost(t, w):
    a = _main_cost_logit(t, w)
    return 0.5 * (expit(a) + expit(a + 0.5))


@register_oracle(DgpKind.MAIN, NuisanceTarget.MU_Y)
def main_outcome(t, w):
    # U is independent of (T, W): average over U and over C given (T, W, U)
    a = _main_cost_logit(t, w)
    total = np.zeros(w.shape[0])
    for u in (0.0, 1.0):
        p_cost = expit(a + 0.5 * u)
        total += 0.5 * (p_cost * _main_outcome_prob(1.0, u, w) + (1.0 - p_cost) * _main_outcome_prob(0.0, u, w))
    return total


@register_oracle(DgpKind.PARAMETRIC, NuisanceTarget.MU_T)
def parametric_propensity(t, w):
    return expit(w[:, 0])


@register_oracle(DgpKind.PARAMETRIC, NuisanceTarget.MU_C)
def parametric_cost(t, w):
    return expit(2.0 * t - 1.0 + w[:, 0])


@register_oracle(DgpKind.PARAMETRIC, NuisanceTarget.MU_Y)
def parametric_outcome(t, w):
    return expit(1.4 * t - 0.7 - 0.3 * w[:, 0])


@dataclass(frozen=True)
class DgpSpec:
    kind: str = DgpKind.PARAMETRIC
    oracle_nuisances: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", DgpKind(self.kind))

    @property
    def covariate_names(self):
        return ("w1", "w2", "w3") if self.kind == DgpKind.MAIN else ("w",)

    def default_problem(self, **overrides) -> ProblemConfig:
        """Active-constraint settings of each design; C and Y are binary so both are bounded."""
        payload = {
            "kappa": 0.68 if self.kind == DgpKind.MAIN else 0.35,
            "alpha": 1.0,
            "y_bounds": (0.0, 1.0),
            "c_bounds": (0.0, 1.0),
        }
        payload.update(overrides)
        return ProblemConfig.from_dict(payload)

    def default_learners(self) -> Dict[str, LearnerSpec]:
        if self.oracle_nuisances:
            return {
                target: LearnerSpec(kind=LearnerKind.ORACLE, dgp=self.kind, target=target)
                for target in (NuisanceTarget.MU_Y, NuisanceTarget.MU_C, NuisanceTarget.MU_T)
            }
        basis = Basis.PAIRWISE if self.kind == DgpKind.MAIN else Basis.MAIN
        return {
            target: LearnerSpec(kind=LearnerKind.LOGISTIC, basis=basis, target=target)
            for target in (NuisanceTarget.MU_Y, NuisanceTarget.MU_C, NuisanceTarget.MU_T)
        }


def _sample_main(n: int, rng: np.random.Generator):
    w1 = rng.uniform(-1.0, 1.0, n)
    w2 = rng.binomial(1, 0.8, n).astype(float)
    w3 = rng.standard_normal(n)
    u = rng.binomial(1, 0.5, n).astype(float)
    w = np.column_stack([w1, w2, w3])
    t = rng.binomial(1, main_propensity(None, w)).astype(float)
    c = rng.binomial(1, expit(_main_cost_logit(t, w) + 0.5 * u)).astype(float)
    y = rng.binomial(1, _main_outcome_prob(c, u, w)).astype(float)
    return w, t, c, y


def _sample_parametric(n: int, rng: np.random.Generator):
    w = rng.uniform(-1.0, 1.0, n).reshape(-1, 1)
    t = rng.binomial(1, parametric_propensity(None, w)).astype(float)
    c = rng.binomial(1, parametric_cost(t, w)).astype(float)
    y = rng.binomial(1, parametric_outcome(t, w)).astype(float)
    return w, t, c, y


def sample_covariates(dgp: DgpSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw W only (used by the Monte Carlo ground truth)."""
    if dgp.kind == DgpKind.MAIN:
        return np.column_stack([rng.uniform(-1.0, 1.0, n), rng.binomial(1, 0.8, n).astype(float), rng.standard_normal(n)])
    return rng.uniform(-1.0, 1.0, n).reshape(-1, 1)


def generate(dgp: DgpSpec, n: int, rng: np.random.Generator) -> Dataset:
    sampler = _sample_main if dgp.kind == DgpKind.MAIN else _sample_parametric
    w, t, c, y = sampler(n, rng)
    names = dgp.covariate_names
    return Dataset(w=w, t=t, c=c, y=y, v_index=tuple(range(len(names))), covariate_names=names)
