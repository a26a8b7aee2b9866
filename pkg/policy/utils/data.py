"""
Dataset representation, delimited-text ingestion and causal-condition guards.

A dataset is the ordered sample of quadruplets (W, T, C, Y) together with the
positions of W that make up the decision covariate V. Arrays are copied and
frozen on construction so a Dataset can be shared read-only between workers.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from django.conf import settings

from ..exceptions import ConfigurationError, DatasetError, InfeasibleBudgetError
from ..models import ReferenceKind

if TYPE_CHECKING:
    from .nuisance import NuisanceBundle

logger = logging.getLogger(__name__)


def _frozen(values, dtype=float) -> np.ndarray:
    array = np.array(values, dtype=dtype, copy=True)
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class DatasetSchema:
    """Maps column names of an input file to their roles."""

    treatment: str
    cost: str
    outcome: str
    covariates: Tuple[str, ...]
    decision: Tuple[str, ...]

    def __post_init__(self):
        if not self.covariates:
            raise ConfigurationError("schema names no covariate columns", code="schema")
        if not self.decision:
            raise ConfigurationError("schema names no decision (V) columns", code="schema")
        unknown = [name for name in self.decision if name not in self.covariates]
        if unknown:
            raise ConfigurationError(
                "decision columns %(names)s are not covariates", code="schema",
                params={"names": ", ".join(unknown)},
            )
        if len(set(self.decision)) != len(self.decision):
            raise ConfigurationError("decision columns must be distinct", code="schema")

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "DatasetSchema":
        try:
            covariates = tuple(payload["covariates"])
            return cls(
                treatment=payload["treatment"],
                cost=payload["cost"],
                outcome=payload["outcome"],
                covariates=covariates,
                decision=tuple(payload.get("decision", covariates)),
            )
        except KeyError as exc:
            raise ConfigurationError(
                "schema is missing the %(key)s entry", code="schema", params={"key": exc.args[0]}
            ) from exc

    @property
    def v_index(self) -> Tuple[int, ...]:
        return tuple(self.covariates.index(name) for name in self.decision)


@dataclass(frozen=True, eq=False)
class Dataset:
    w: np.ndarray
    t: np.ndarray
    c: np.ndarray
    y: np.ndarray
    v_index: Tuple[int, ...]
    covariate_names: Tuple[str, ...] = ()

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if w.ndim == 1:
            w = w.reshape(-1, 1)
        n = w.shape[0]
        if n < 1:
            raise DatasetError("dataset has no observations", code="empty")
        for name in ("t", "c", "y"):
            if np.size(getattr(self, name)) != n:
                raise DatasetError(
                    "column %(column)s has %(got)d values, expected %(n)d",
                    code="shape", params={"column": name, "got": np.size(getattr(self, name)), "n": n},
                )
        t = np.asarray(self.t, dtype=float).ravel()
        c = np.asarray(self.c, dtype=float).ravel()
        y = np.asarray(self.y, dtype=float).ravel()

        for name, values in (("w", w), ("t", t), ("c", c), ("y", y)):
            bad = ~np.isfinite(values)
            if bad.any():
                row = int(np.argwhere(bad)[0][0]) + 1
                raise DatasetError(
                    "non-finite value in %(column)s at row %(row)d",
                    code="finite", params={"column": name, "row": row},
                )
        bad_t = (t != 0) & (t != 1)
        if bad_t.any():
            raise DatasetError(
                "treatment not in {0,1} at row %(row)d",
                code="treatment", params={"row": int(np.argmax(bad_t)) + 1},
            )
        if (c < 0).any():
            raise DatasetError(
                "negative cost at row %(row)d", code="cost", params={"row": int(np.argmax(c < 0)) + 1}
            )

        v_index = tuple(int(i) for i in self.v_index)
        p = w.shape[1]
        if not v_index or len(set(v_index)) != len(v_index) or any(i < 0 or i >= p for i in v_index):
            raise DatasetError(
                "decision covariate positions %(index)s invalid for %(p)d covariates",
                code="v_index", params={"index": list(v_index), "p": p},
            )
        names = tuple(self.covariate_names) or tuple(f"w{j + 1}" for j in range(p))
        if len(names) != p:
            raise DatasetError("expected %(p)d covariate names", code="names", params={"p": p})

        object.__setattr__(self, "w", _frozen(w))
        object.__setattr__(self, "t", _frozen(t))
        object.__setattr__(self, "c", _frozen(c))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "v_index", v_index)
        object.__setattr__(self, "covariate_names", names)

    @property
    def n(self) -> int:
        return self.w.shape[0]

    @property
    def v(self) -> np.ndarray:
        return self.w[:, list(self.v_index)]

    @property
    def v_is_w(self) -> bool:
        """True when V(W) = W (every covariate is a decision covariate)."""
        return set(self.v_index) == set(range(self.w.shape[1]))

    def __len__(self):
        return self.n

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(
            w=self.w[rows], t=self.t[rows], c=self.c[rows], y=self.y[rows],
            v_index=self.v_index, covariate_names=self.covariate_names,
        )

    def schema(self, treatment="t", cost="c", outcome="y") -> DatasetSchema:
        return DatasetSchema(
            treatment=treatment, cost=cost, outcome=outcome,
            covariates=self.covariate_names,
            decision=tuple(self.covariate_names[i] for i in self.v_index),
        )

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.w, columns=list(self.covariate_names))
        frame["t"] = self.t.astype(int)
        frame["c"] = self.c
        frame["y"] = self.y
        return frame

    def save(self, path, sep=",") -> DatasetSchema:
        """Write the dataset as delimited text; returns the schema that reloads it."""
        self.to_frame().to_csv(path, sep=sep, index=False, float_format="%.17g")
        return self.schema()


def _detect_delimiter(path: Path) -> str:
    with open(path, newline="") as fh:
        header = fh.readline()
    return "\t" if "\t" in header else ","


def _numeric_column(frame: pd.DataFrame, name: str) -> np.ndarray:
    values = np.empty(len(frame))
    for row, cell in enumerate(frame[name], start=1):
        try:
            values[row - 1] = float(cell)
        except (TypeError, ValueError):
            raise DatasetError(
                "non-numeric value %(value)r in column %(column)s at row %(row)d",
                code="numeric", params={"value": cell, "column": name, "row": row},
            ) from None
    return values


def load_dataset(path, schema: DatasetSchema) -> Dataset:
    """Read a header-first comma- or tab-delimited file into a validated Dataset.

    Column order in the file is free; ``schema`` assigns roles by name. Row
    numbers in error messages count data rows from 1 (the header is row 0).
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError("data file %(path)s does not exist", code="missing", params={"path": str(path)})
    sep = _detect_delimiter(path)
    try:
        frame = pd.read_csv(path, sep=sep, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError as exc:
        raise DatasetError("data file %(path)s is empty", code="empty", params={"path": str(path)}) from exc
    frame.columns = [str(col).strip() for col in frame.columns]

    required = [schema.treatment, schema.cost, schema.outcome, *schema.covariates]
    missing = [name for name in required if name not in frame.columns]
    if missing:
        raise DatasetError(
            "missing column(s) %(columns)s in %(path)s",
            code="column", params={"columns": ", ".join(missing), "path": str(path)},
        )

    t = _numeric_column(frame, schema.treatment)
    c = _numeric_column(frame, schema.cost)
    y = _numeric_column(frame, schema.outcome)
    w = np.column_stack([_numeric_column(frame, name) for name in schema.covariates]) if len(frame) else np.empty((0, len(schema.covariates)))

    logger.info(f"Loaded {len(frame)} rows from {path} (delimiter {sep!r})")
    return Dataset(w=w, t=t, c=c, y=y, v_index=schema.v_index, covariate_names=schema.covariates)


def _policy_default(key: str, fallback):
    return getattr(settings, "POLICY", {}).get(key, fallback)


def _parse_kappa(value) -> float:
    if value is None or (isinstance(value, str) and value.strip().lower() in ("inf", "infinity", "+inf")):
        return math.inf
    return float(value)


def _parse_bounds(value) -> Optional[Tuple[float, float]]:
    if value is None:
        return None
    lower, upper = (float(b) for b in value)
    if not lower < upper:
        raise ConfigurationError("bounds must satisfy lower < upper, got %(value)s", code="bounds", params={"value": value})
    return lower, upper


@dataclass(frozen=True)
class ProblemConfig:
    """Constraint, reference rules and numeric guards for one estimation problem."""

    kappa: float = math.inf
    alpha: float = 1.0
    references: Tuple[str, ...] = (ReferenceKind.FR, ReferenceKind.RD, ReferenceKind.TP)
    fr_value: float = 0.0
    eps_t: float = 0.01
    eps_c: float = 1e-3
    y_bounds: Optional[Tuple[float, float]] = None
    c_bounds: Optional[Tuple[float, float]] = None
    folds: int = 10
    cost_bound: Optional[float] = None
    seed: int = 20240607

    def __post_init__(self):
        errors = []
        if not 0 <= self.alpha <= 1:
            errors.append("alpha must lie in [0, 1]")
        if not self.kappa > 0:
            errors.append("kappa must be positive")
        if not 0 < self.eps_t < 0.5:
            errors.append("eps_t must lie in (0, 0.5)")
        if not self.eps_c > 0:
            errors.append("eps_c must be positive")
        if int(self.folds) != self.folds or self.folds < 1:
            errors.append("folds must be a positive integer")
        if not 0 <= self.fr_value <= 1:
            errors.append("fr_value must lie in [0, 1]")
        if self.cost_bound is not None and not self.cost_bound > 0:
            errors.append("cost_bound must be positive")
        valid = set(ReferenceKind.values)
        unknown = [ref for ref in self.references if ref not in valid]
        if unknown or not self.references:
            errors.append(f"references must be a non-empty subset of {sorted(valid)}")
        if errors:
            raise ConfigurationError(errors)
        object.__setattr__(self, "references", tuple(ReferenceKind(ref) for ref in self.references))
        object.__setattr__(self, "folds", int(self.folds))

    @property
    def unconstrained(self) -> bool:
        """kappa = inf, or kappa at or above a known upper bound on costs."""
        if math.isinf(self.kappa):
            return True
        return self.cost_bound is not None and self.kappa >= self.cost_bound

    @property
    def effective_kappa(self) -> float:
        return math.inf if self.unconstrained else self.kappa

    @classmethod
    def from_dict(cls, payload: Optional[Dict[str, Any]] = None, **overrides) -> "ProblemConfig":
        payload = {**(payload or {}), **overrides}
        try:
            return cls(
                kappa=_parse_kappa(payload.get("kappa")),
                alpha=float(payload.get("alpha", 1.0)),
                references=tuple(payload.get("references", cls.references)),
                fr_value=float(payload.get("fr_value", 0.0)),
                eps_t=float(payload.get("eps_t", _policy_default("EPS_T", 0.01))),
                eps_c=float(payload.get("eps_c", _policy_default("EPS_C", 1e-3))),
                y_bounds=_parse_bounds(payload.get("y_bounds")),
                c_bounds=_parse_bounds(payload.get("c_bounds")),
                folds=payload.get("folds", _policy_default("FOLDS", 10)),
                cost_bound=None if payload.get("cost_bound") is None else float(payload["cost_bound"]),
                seed=int(payload.get("seed", _policy_default("DEFAULT_SEED", 20240607))),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigurationError("invalid problem configuration: %(error)s", code="problem", params={"error": exc}) from exc

    def to_dict(self) -> Dict[str, Any]:
        payload = asdict(self)
        payload["kappa"] = "inf" if math.isinf(self.kappa) else self.kappa
        payload["references"] = [str(ref) for ref in self.references]
        for key in ("y_bounds", "c_bounds"):
            if payload[key] is not None:
                payload[key] = list(payload[key])
        return payload


@dataclass(frozen=True)
class ValidationReport:
    n: int
    propensity_truncated: int
    delta_c_floored: int
    contrast_c_floored: int
    phi_n: float
    alpha_phi: float
    kappa: float
    feasible: bool
    messages: List[str] = field(default_factory=list)

    @property
    def propensity_truncated_fraction(self) -> float:
        return self.propensity_truncated / self.n

    @property
    def delta_c_floored_fraction(self) -> float:
        return self.delta_c_floored / self.n

    @property
    def contrast_c_floored_fraction(self) -> float:
        return self.contrast_c_floored / self.n

    @property
    def clean(self) -> bool:
        return self.feasible and not (self.propensity_truncated or self.delta_c_floored or self.contrast_c_floored)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n": self.n,
            "propensity_truncated": self.propensity_truncated,
            "propensity_truncated_fraction": self.propensity_truncated_fraction,
            "delta_c_floored": self.delta_c_floored,
            "delta_c_floored_fraction": self.delta_c_floored_fraction,
            "contrast_c_floored": self.contrast_c_floored,
            "contrast_c_floored_fraction": self.contrast_c_floored_fraction,
            "phi_n": self.phi_n,
            "alpha_phi": self.alpha_phi,
            "kappa": "inf" if math.isinf(self.kappa) else self.kappa,
            "feasible": self.feasible,
            "messages": list(self.messages),
        }


def validate_conditions(ds: Dataset, cfg: ProblemConfig, nb: "NuisanceBundle", phi_n: Optional[float] = None) -> ValidationReport:
    """Count where positivity truncation and cost-margin flooring kick in.

    Raises InfeasibleBudgetError (with the report attached) when
    alpha * phi_n >= kappa: no rule can satisfy the constraint then.
    """
    from .knapsack import phi_one_step

    if phi_n is None:
        phi_n = phi_one_step(ds, nb)

    propensity = nb.propensity_raw(ds.w)
    truncated = int(np.count_nonzero((propensity < cfg.eps_t) | (propensity > 1 - cfg.eps_t)))
    delta_c_floored = int(np.count_nonzero(nb.delta_c_raw(ds.v) < cfg.eps_c))
    contrast_c_floored = int(np.count_nonzero(nb.contrast_c_raw(ds.w) < cfg.eps_c))

    alpha_phi = cfg.alpha * phi_n
    feasible = bool(alpha_phi < cfg.kappa)
    messages = []
    if truncated:
        messages.append(f"propensity truncated to [{cfg.eps_t}, {1 - cfg.eps_t}] for {truncated} of {ds.n} observations")
    if delta_c_floored or contrast_c_floored:
        messages.append(
            f"cost contrast floored at {cfg.eps_c}: delta_c for {delta_c_floored}, Delta_c for {contrast_c_floored} observations"
        )
    if not feasible:
        messages.append(f"infeasible budget: alpha * phi_n = {alpha_phi:.6g} >= kappa = {cfg.kappa:.6g}")

    report = ValidationReport(
        n=ds.n, propensity_truncated=truncated, delta_c_floored=delta_c_floored,
        contrast_c_floored=contrast_c_floored, phi_n=float(phi_n), alpha_phi=float(alpha_phi),
        kappa=cfg.kappa, feasible=feasible, messages=messages,
    )
    for message in messages:
        logger.warning(message)
    if not feasible:
        raise InfeasibleBudgetError(messages[-1], report=report)
    return report
