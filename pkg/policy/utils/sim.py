"""
🎲 Simulation harness.

Ground truth for each design (Monte Carlo over a large covariate sample, or
midpoint quadrature for the one-dimensional parametric design) and the
replicated estimation study that scores coverage, bias, RMSE, the SE/SD
ratio and the scaled interval widths.

Every replication draws from its own Philox stream keyed on
(master seed, sample size, replication index), so results do not depend on
worker count or execution order.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from django.conf import settings
from django.core.cache import cache
from joblib import Parallel, delayed

from ..exceptions import ConfigurationError, EstimationError
from ..models import DgpKind, NuisanceTarget, ReferenceKind
from .data import ProblemConfig
from .dgp import DgpSpec, generate, sample_covariates
from .knapsack import build_rho
from .learners import LearnerSpec, oracle_predict
from .manifest import cache_key
from .pipeline import PolicyEstimator

logger = logging.getLogger(__name__)

REPLICATION_STREAM = 0
TRUTH_STREAM = 1
QUADRATURE_POINTS = 10_000
RECOMMENDED_TRUTH_SAMPLES = 1_000_000


def stream_rng(master_seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for one (master seed, key) pair."""
    sequence = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(sequence))


def replication_rng(master_seed: int, n: int, replication: int) -> np.random.Generator:
    return stream_rng(master_seed, REPLICATION_STREAM, n, replication)


# ---------------------------------------------------------------------------
# Ground truth
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TruthResult:
    dgp: str
    method: str
    samples: int
    seed: int
    psi0: Dict[str, float]
    phi0: float
    eta0: float
    tau0: float
    value_optimal: float
    reference_values: Dict[str, float]
    rd0: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "dgp": str(self.dgp),
            "method": self.method,
            "samples": self.samples,
            "seed": self.seed,
            "psi0": dict(self.psi0),
            "phi0": self.phi0,
            "eta0": self.eta0,
            "tau0": self.tau0,
            "rd0": self.rd0,
            "value_optimal": self.value_optimal,
            "reference_values": dict(self.reference_values),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "TruthResult":
        return cls(
            dgp=payload["dgp"], method=payload["method"], samples=payload["samples"], seed=payload["seed"],
            psi0=dict(payload["psi0"]), phi0=payload["phi0"], eta0=payload["eta0"], tau0=payload["tau0"],
            value_optimal=payload["value_optimal"], reference_values=dict(payload["reference_values"]),
            rd0=payload.get("rd0"),
        )


def _truth_points(dgp: DgpSpec, samples: int, seed: int, method: str) -> np.ndarray:
    if method == "quadrature":
        if dgp.kind != DgpKind.PARAMETRIC:
            raise ConfigurationError(
                "quadrature ground truth is only available for the parametric design, not %(dgp)s",
                code="method", params={"dgp": dgp.kind},
            )
        # W ~ Unif(-1, 1): equal-weight midpoints
        edges = np.linspace(-1.0, 1.0, QUADRATURE_POINTS + 1)
        return ((edges[:-1] + edges[1:]) / 2.0).reshape(-1, 1)
    if method != "montecarlo":
        raise ConfigurationError("unknown truth method %(method)s", code="method", params={"method": method})
    if samples < 1:
        raise ConfigurationError("samples must be >= 1, got %(samples)d", code="samples", params={"samples": samples})
    if samples < RECOMMENDED_TRUTH_SAMPLES:
        logger.warning(f"Ground truth from only {samples} samples; at least {RECOMMENDED_TRUTH_SAMPLES} recommended")
    return sample_covariates(dgp, samples, stream_rng(seed, TRUTH_STREAM))


def _compute_truth(dgp: DgpSpec, cfg: ProblemConfig, samples: int, seed: int, method: str) -> TruthResult:
    w = _truth_points(dgp, samples, seed, method)
    n = w.shape[0]

    def oracle(target, t):
        return oracle_predict(dgp.kind, target, np.full(n, t), w)

    mu_t = oracle(NuisanceTarget.MU_T, 1.0)
    mu_c1, mu_c0 = oracle(NuisanceTarget.MU_C, 1.0), oracle(NuisanceTarget.MU_C, 0.0)
    mu_y1, mu_y0 = oracle(NuisanceTarget.MU_Y, 1.0), oracle(NuisanceTarget.MU_Y, 0.0)
    delta_y = mu_y1 - mu_y0
    delta_c_raw = mu_c1 - mu_c0
    delta_c = np.maximum(delta_c_raw, cfg.eps_c)

    phi0 = float(np.mean(mu_c0))
    kappa = cfg.effective_kappa
    rule = build_rho(delta_y / delta_c, delta_c, kappa, cfg.alpha, phi0)
    rho0 = rule.evaluate()
    value_optimal = float(np.mean(rho0 * delta_y))
    mean_delta_y = float(np.mean(delta_y))

    rd0 = None
    reference_values = {}
    for kind in cfg.references:
        if kind == ReferenceKind.FR:
            reference_values[str(kind)] = cfg.fr_value * mean_delta_y
        elif kind == ReferenceKind.TP:
            reference_values[str(kind)] = float(np.mean(mu_t * delta_y))
        else:
            rd0 = 1.0 if math.isinf(kappa) else min(1.0, (kappa - cfg.alpha * phi0) / float(np.mean(delta_c_raw)))
            reference_values[str(kind)] = rd0 * mean_delta_y

    return TruthResult(
        dgp=str(dgp.kind), method=method, samples=n, seed=seed,
        psi0={kind: value_optimal - value for kind, value in reference_values.items()},
        phi0=phi0, eta0=float(rule.eta), tau0=max(float(rule.eta), 0.0),
        value_optimal=value_optimal, reference_values=reference_values, rd0=rd0,
    )


def truth_psi0(dgp: DgpSpec, cfg: ProblemConfig, samples: Optional[int] = None, seed: Optional[int] = None,
               method: str = "montecarlo", use_cache: bool = True) -> TruthResult:
    """psi_0 for every configured reference under the oracle nuisances of ``dgp``.

    Results are memoised in the Django cache, keyed on the design, the
    problem configuration, the sample count, the seed and the method.
    """
    policy = getattr(settings, "POLICY", {})
    samples = int(policy.get("TRUTH_SAMPLES", RECOMMENDED_TRUTH_SAMPLES) if samples is None else samples)
    seed = int(cfg.seed if seed is None else seed)
    key = cache_key("policy:truth", {
        "dgp": str(dgp.kind), "problem": cfg.to_dict(), "samples": samples, "seed": seed, "method": method,
    })

    if use_cache:
        cached = cache.get(key)
        if cached is not None:
            logger.debug(f"Ground truth cache hit {key}")
            return TruthResult.from_dict(cached)

    result = _compute_truth(dgp, cfg, samples, seed, method)
    logger.info(f"Ground truth for {dgp.kind} ({method}, {result.samples} points): {result.psi0}")
    if use_cache:
        cache.set(key, result.to_dict(), timeout=policy.get("TRUTH_CACHE_TIMEOUT", None))
    return result


# ---------------------------------------------------------------------------
# Replicated estimation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReplicationRecord:
    index: int
    psi: Dict[str, float] = field(default_factory=dict)
    sigma: Dict[str, float] = field(default_factory=dict)
    ci95: Dict[str, tuple] = field(default_factory=dict)
    lower975: Dict[str, float] = field(default_factory=dict)
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None


def run_replication(dgp: DgpSpec, cfg: ProblemConfig, specs: Dict[str, LearnerSpec], n: int,
                    master_seed: int, index: int) -> ReplicationRecord:
    """Draw one dataset and estimate every reference; failures are returned, not raised."""
    rng = replication_rng(master_seed, n, index)
    ds = generate(dgp, n, rng)
    fold_cfg = replace(cfg, seed=int(rng.integers(0, 2**31 - 1)))
    try:
        result = PolicyEstimator(fold_cfg, specs).fit(ds, strict=True)
    except (EstimationError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        logger.warning(f"Replication {index} (n={n}) failed: {exc}")
        return ReplicationRecord(index=index, error=f"{type(exc).__name__}: {exc}")

    estimates = result.estimates
    return ReplicationRecord(
        index=index,
        psi={kind: est.psi for kind, est in estimates.items()},
        sigma={kind: est.sigma for kind, est in estimates.items()},
        ci95={kind: est.ci_95 for kind, est in estimates.items()},
        lower975={kind: est.lower_975 for kind, est in estimates.items()},
    )


@dataclass(frozen=True)
class ReferenceMetrics:
    reference: str
    truth: float
    completed: int
    coverage_95: float
    coverage_lower_975: float
    bias: float
    rmse: float
    se_sd_ratio: Optional[float]
    scaled_ci_widths: List[float]

    @property
    def width_quartiles(self) -> Dict[str, float]:
        q1, median, q3 = np.percentile(self.scaled_ci_widths, [25, 50, 75])
        return {"q1": float(q1), "median": float(median), "q3": float(q3)}

    def to_dict(self) -> dict:
        return {
            "reference": str(self.reference),
            "truth": self.truth,
            "completed": self.completed,
            "coverage_95": self.coverage_95,
            "coverage_lower_975": self.coverage_lower_975,
            "bias": self.bias,
            "rmse": self.rmse,
            "se_sd_ratio": self.se_sd_ratio,
            "scaled_ci_width": self.width_quartiles,
            "scaled_ci_widths": list(self.scaled_ci_widths),
        }


def summarize(kind: str, records: Sequence[ReplicationRecord], truth: float, n: int) -> ReferenceMetrics:
    kind = str(kind)
    done = [record for record in records if not record.failed and kind in record.psi]
    if not done:
        raise EstimationError(f"no successful replications for reference {kind}")
    psi = np.array([record.psi[kind] for record in done])
    sigma = np.array([record.sigma[kind] for record in done])
    lower = np.array([record.ci95[kind][0] for record in done])
    upper = np.array([record.ci95[kind][1] for record in done])
    lower_975 = np.array([record.lower975[kind] for record in done])

    error = psi - truth
    se_sd = None
    if len(done) >= 2:
        sd = float(np.std(psi, ddof=1))
        se_sd = float(np.mean(sigma / math.sqrt(n)) / sd) if sd > 0 else None

    return ReferenceMetrics(
        reference=kind,
        truth=truth,
        completed=len(done),
        coverage_95=float(np.mean((lower <= truth) & (truth <= upper))),
        coverage_lower_975=float(np.mean(lower_975 <= truth)),
        bias=float(np.mean(error)),
        rmse=float(np.sqrt(np.mean(error ** 2))),
        se_sd_ratio=se_sd,
        scaled_ci_widths=[float(v) for v in math.sqrt(n) * (upper - lower)],
    )


@dataclass
class SimulationReport:
    dgp: str
    n: int
    reps: int
    seed: int
    truth: TruthResult
    records: List[ReplicationRecord]
    metrics: Dict[str, ReferenceMetrics] = field(default_factory=dict)

    @property
    def failures(self) -> List[ReplicationRecord]:
        return [record for record in self.records if record.failed]

    @property
    def completed(self) -> int:
        return self.reps - len(self.failures)

    def to_dict(self) -> dict:
        return {
            "dgp": str(self.dgp),
            "n": self.n,
            "reps": self.reps,
            "seed": self.seed,
            "completed": self.completed,
            "failed": len(self.failures),
            "failures": [{"index": record.index, "error": record.error} for record in self.failures],
            "truth": self.truth.to_dict(),
            "references": {kind: metrics.to_dict() for kind, metrics in self.metrics.items()},
        }

    def to_frame(self) -> pd.DataFrame:
        """One row per (replication, reference): psi_n, sigma_n and sqrt(n) * CI width."""
        rows = []
        for record in self.records:
            if record.failed:
                continue
            for kind, psi in record.psi.items():
                lo, hi = record.ci95[kind]
                rows.append({
                    "n": self.n,
                    "replication": record.index,
                    "reference": kind,
                    "psi": psi,
                    "sigma": record.sigma[kind],
                    "scaled_width": math.sqrt(self.n) * (hi - lo),
                })
        return pd.DataFrame(rows, columns=["n", "replication", "reference", "psi", "sigma", "scaled_width"])


def monte_carlo(dgp: DgpSpec, cfg: ProblemConfig, specs: Dict[str, LearnerSpec], n: int, reps: int,
                master_seed: int, truth: TruthResult, n_jobs: int = 1) -> SimulationReport:
    if reps < 1:
        raise ConfigurationError("reps must be ≥ 1", code="reps")
    if n < 2:
        raise ConfigurationError("n must be ≥ 2, got %(n)d", code="n", params={"n": n})
    missing = [str(kind) for kind in cfg.references if str(kind) not in truth.psi0]
    if missing:
        raise ConfigurationError("ground truth lacks references %(missing)s", code="truth", params={"missing": missing})

    logger.info(f"Simulating {dgp.kind}: n={n}, reps={reps}, seed={master_seed}, workers={n_jobs}")
    records = Parallel(n_jobs=n_jobs)(
        delayed(run_replication)(dgp, cfg, specs, n, master_seed, index) for index in range(reps)
    )
    records = sorted(records, key=lambda record: record.index)

    report = SimulationReport(dgp=str(dgp.kind), n=n, reps=reps, seed=master_seed, truth=truth, records=records)
    if report.failures:
        logger.warning(f"{len(report.failures)} of {reps} replications failed at n={n}")
    for kind in cfg.references:
        try:
            report.metrics[str(kind)] = summarize(kind, records, truth.psi0[str(kind)], n)
        except EstimationError as exc:
            logger.error(str(exc))
    return report


def format_table(reports: Sequence[SimulationReport]) -> str:
    """Plain-text table, one block of rows per sample size."""
    header = f"{'n':>7} {'ref':>4} {'cov95':>7} {'cov97.5L':>9} {'bias':>9} {'rmse':>8} {'se/sd':>7} {'med sqrt(n)w':>13} {'fail':>5}"
    lines = [header, "-" * len(header)]
    for report in reports:
        for kind, metrics in report.metrics.items():
            ratio = "-" if metrics.se_sd_ratio is None else f"{metrics.se_sd_ratio:.3f}"
            lines.append(
                f"{report.n:>7} {kind:>4} {metrics.coverage_95:>7.1%} {metrics.coverage_lower_975:>9.1%} "
                f"{metrics.bias:>9.4f} {metrics.rmse:>8.4f} {ratio:>7} "
                f"{metrics.width_quartiles['median']:>13.3f} {len(report.failures):>5}"
            )
    return "\n".join(lines)


def replications_frame(reports: Sequence[SimulationReport]) -> pd.DataFrame:
    frames = [report.to_frame() for report in reports]
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()
