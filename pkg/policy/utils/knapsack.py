"""
Estimated optimal rule: the empirical fractional knapsack over xi.

Observations are items with value density xi_i and weight Delta^C_i / n
(floored cost contrast). The rule treats items in decreasing xi until the
budget k - alpha * phi_n is spent, randomizing on the marginal tie group,
and never treats items with xi below the zero-truncated threshold.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from ..exceptions import InfeasibleBudgetError
from .data import Dataset, ProblemConfig
from .nuisance import NuisanceBundle, SampleNuisances

logger = logging.getLogger(__name__)


class TreatmentRule:
    """A stochastic rule evaluated on the observed sample."""

    kind = None

    def evaluate(self, n: int) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"kind": self.kind}


@dataclass(frozen=True, eq=False)
class ThresholdRule(TreatmentRule):
    xi: np.ndarray
    eta: float
    boundary_prob: float = 0.0
    clamped: bool = False

    kind = "threshold"

    def __post_init__(self):
        if not 0.0 <= self.boundary_prob <= 1.0:
            raise ValueError(f"boundary probability {self.boundary_prob} outside [0, 1]")

    def evaluate(self, n: Optional[int] = None) -> np.ndarray:
        if n is not None and n != self.xi.shape[0]:
            raise ValueError(f"rule was built on {self.xi.shape[0]} observations, asked for {n}")
        rho = (self.xi > self.eta).astype(float)
        rho[self.xi == self.eta] = self.boundary_prob
        return rho

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "eta": self.eta,
            "boundary_prob": self.boundary_prob,
            "clamped": self.clamped,
            "xi": self.xi.tolist(),
            "rho": self.evaluate().tolist(),
        }


@dataclass(frozen=True)
class ConstantRule(TreatmentRule):
    p: float

    kind = "constant"

    def evaluate(self, n: int) -> np.ndarray:
        return np.full(n, float(self.p))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "p": self.p}


@dataclass(frozen=True, eq=False)
class PropensityRule(TreatmentRule):
    mu_t: np.ndarray

    kind = "propensity"

    def evaluate(self, n: Optional[int] = None) -> np.ndarray:
        return np.asarray(self.mu_t, dtype=float)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "rho": self.evaluate().tolist()}


def phi_one_step(ds: Dataset, nb: NuisanceBundle) -> float:
    """One-step estimate of E[mu^C(0, W)], the expected cost under never-treat."""
    mu_c0 = nb.mu_c_at(0.0, ds.w)
    mu_t = nb.propensity(ds.w)
    return one_step_cost(ds.t, ds.c, mu_c0, mu_t)


def one_step_cost(t, c, mu_c0, mu_t) -> float:
    return float(np.mean(mu_c0 + (1.0 - t) * (c - mu_c0) / (1.0 - mu_t)))


def empirical_gamma(xi, delta_c, tau: float) -> Tuple[float, float]:
    """Cost mass strictly above ``tau`` and exactly at ``tau``, both divided by n."""
    xi = np.asarray(xi, dtype=float)
    delta_c = np.asarray(delta_c, dtype=float)
    n = xi.shape[0]
    above = float(delta_c[xi > tau].sum()) / n
    tied = float(delta_c[xi == tau].sum()) / n
    return above, tied


def _clamp_probability(prob: float, context: str) -> Tuple[float, bool]:
    if 0.0 <= prob <= 1.0:
        return prob, False
    clamped = min(max(prob, 0.0), 1.0)
    logger.warning(f"{context}: boundary probability {prob:.6g} clamped to {clamped:g}")
    return clamped, True


@dataclass(frozen=True)
class BudgetSolution:
    eta: float
    tau: float
    rule: ThresholdRule


def _descending_groups(xi: np.ndarray):
    """Distinct xi values in decreasing order and each observation's group index."""
    values, inverse = np.unique(xi, return_inverse=True)
    return values[::-1], len(values) - 1 - inverse.ravel()


def _descending_masses(xi: np.ndarray, delta_c: np.ndarray):
    values, groups = _descending_groups(xi)
    return values, np.bincount(groups, weights=delta_c, minlength=len(values)) / xi.shape[0]


def solve_rule_at_budget(xi, delta_c, k: float, alpha: float, phi_n: float) -> BudgetSolution:
    """eta_n(k) = inf{tau : Gamma_n(tau) <= k - alpha * phi_n} and the rule d_{n,k}.

    The infimum is an observed xi value, or -inf when the whole cost mass
    fits in the budget. d_{n,k} thresholds at eta_n(k) itself, so it treats
    harmful items whenever the budget reaches them.
    """
    xi = np.asarray(xi, dtype=float)
    delta_c = np.asarray(delta_c, dtype=float)
    budget = k - alpha * phi_n
    if budget < 0:
        raise InfeasibleBudgetError(f"infeasible budget: k - alpha * phi_n = {budget:.6g} < 0")
    if math.isinf(k):
        return BudgetSolution(eta=-math.inf, tau=0.0, rule=ThresholdRule(xi=xi, eta=-math.inf))

    values, mass = _descending_masses(xi, delta_c)
    cumulative = np.cumsum(mass)
    j = int(np.searchsorted(cumulative, budget, side="right"))
    if j == len(values):
        return BudgetSolution(eta=-math.inf, tau=0.0, rule=ThresholdRule(xi=xi, eta=-math.inf))

    eta = float(values[j])
    above, tied = empirical_gamma(xi, delta_c, eta)
    prob = 0.0
    clamped = False
    if tied > 0:
        prob, clamped = _clamp_probability((budget - above) / tied, f"d_n,k at k={k:.6g}")
    return BudgetSolution(eta=eta, tau=max(eta, 0.0), rule=ThresholdRule(xi=xi, eta=eta, boundary_prob=prob, clamped=clamped))


def build_rho(xi, delta_c, k_n: float, alpha: float, phi_n: float) -> ThresholdRule:
    """The estimated rule: thresholds at tau_n(k_n) = max(eta_n(k_n), 0)."""
    xi = np.asarray(xi, dtype=float)
    delta_c = np.asarray(delta_c, dtype=float)
    tau = solve_rule_at_budget(xi, delta_c, k_n, alpha, phi_n).tau
    if math.isinf(k_n):
        return ThresholdRule(xi=xi, eta=tau)
    above, tied = empirical_gamma(xi, delta_c, tau)
    if tied <= 0:
        return ThresholdRule(xi=xi, eta=tau)
    prob, clamped = _clamp_probability((k_n - alpha * phi_n - above) / tied, f"rho_n at k_n={k_n:.6g}")
    return ThresholdRule(xi=xi, eta=tau, boundary_prob=prob, clamped=clamped)


def budget_equation(sample: SampleNuisances, rho: np.ndarray, alpha: float, phi_n: float) -> float:
    """(1/n) sum rho_i [Delta^C_i + weighted cost residual_i] + alpha * phi_n."""
    return float(np.mean(rho * (sample.contrast_c + sample.cost_residual))) + alpha * phi_n


def calibrate_budget(sample: SampleNuisances, cfg: ProblemConfig, phi_n: float) -> Tuple[float, bool]:
    """Solve the calibration equation for k when the constraint binds.

    Between consecutive cumulative cost levels of the descending xi groups the
    left-hand side is affine in k (only the boundary probability moves), so
    every segment is solved in closed form. Of all roots, the one closest to
    kappa is returned; with no root, or when tau_n(kappa) <= 0, kappa itself.
    """
    kappa = cfg.kappa
    if cfg.unconstrained:
        return kappa, False
    xi, delta_c = sample.xi, sample.contrast_c
    if solve_rule_at_budget(xi, delta_c, kappa, cfg.alpha, phi_n).tau <= 0:
        return kappa, False

    offset = cfg.alpha * phi_n
    target = kappa - offset
    values, groups = _descending_groups(xi)
    n = xi.shape[0]
    mass = np.bincount(groups, weights=delta_c, minlength=len(values)) / n
    group_value = np.bincount(groups, weights=delta_c + sample.cost_residual, minlength=len(values)) / n

    candidates: List[float] = []
    level, value_above = 0.0, 0.0
    for m_j, b_j in zip(mass, group_value):
        upper = level + m_j
        if b_j != 0:
            root = level + (target - value_above) * m_j / b_j
            if level - 1e-15 <= root <= upper + 1e-15:
                candidates.append(min(max(root, level), upper))
        elif abs(value_above - target) <= 1e-12:
            candidates.append(min(max(target, level), upper))
        level, value_above = upper, value_above + b_j
    if abs(value_above - target) <= 1e-12:
        # past the last group every item is treated and the left-hand side is flat
        candidates.append(level)

    if not candidates:
        logger.info(f"No root of the calibration equation in [0, {level + offset:.6g}]; using k_n = kappa")
        return kappa, False
    roots = np.array(candidates) + offset
    k_n = float(roots[np.argmin(np.abs(roots - kappa))])
    return k_n, True


@dataclass(frozen=True)
class KnapsackFit:
    phi_n: float
    eta_kappa: float
    tau_kappa: float
    k_n: float
    rule: ThresholdRule
    saturated: bool
    budget_term: Optional[float] = None
    warnings: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "phi_n": self.phi_n,
            "eta_kappa": self.eta_kappa,
            "tau_kappa": self.tau_kappa,
            "k_n": self.k_n,
            "saturated": self.saturated,
            "budget_term": self.budget_term,
            "warnings": list(self.warnings),
            "rule": self.rule.to_dict(),
        }


def fit_knapsack(sample: SampleNuisances, cfg: ProblemConfig, phi_n: float) -> KnapsackFit:
    kappa = cfg.effective_kappa
    at_kappa = solve_rule_at_budget(sample.xi, sample.contrast_c, kappa, cfg.alpha, phi_n)
    k_n, saturated = calibrate_budget(sample, cfg, phi_n)
    rule = build_rho(sample.xi, sample.contrast_c, math.inf if cfg.unconstrained else k_n, cfg.alpha, phi_n)

    warnings = []
    if rule.clamped:
        warnings.append(f"boundary probability clamped to {rule.boundary_prob:g}")
    budget_term = None
    if not math.isinf(kappa):
        budget_term = budget_equation(sample, rule.evaluate(), cfg.alpha, phi_n) - cfg.kappa
    logger.info(
        f"Knapsack: phi_n={phi_n:.6g} eta(kappa)={at_kappa.eta:.6g} tau(kappa)={at_kappa.tau:.6g} "
        f"k_n={k_n:.6g} saturated={saturated}"
    )
    return KnapsackFit(
        phi_n=phi_n, eta_kappa=at_kappa.eta, tau_kappa=at_kappa.tau, k_n=k_n, rule=rule,
        saturated=saturated, budget_term=budget_term, warnings=warnings,
    )
