"""
Per-run JSON configuration.

    {
      "schema":   {"treatment": "t", "cost": "c", "outcome": "y",
                   "covariates": ["w1", "w2"], "decision": ["w1"]},
      "problem":  {"kappa": 0.35, "alpha": 1, "references": ["FR", "RD", "TP"]},
      "learners": {"default": {"kind": "logistic", "basis": "main"},
                   "delta_y": {"kind": "linear", "basis": "main"}}
    }

``learners.default`` applies to mu_y, mu_c and mu_t unless a target has its
own entry. Every section is optional; ``schema`` is required by ``estimate``.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

from ..exceptions import ConfigurationError
from ..models import NuisanceTarget
from .data import DatasetSchema, ProblemConfig
from .learners import LearnerSpec

logger = logging.getLogger(__name__)

SECTIONS = ("schema", "problem", "learners")
OUTCOME_TARGETS = (NuisanceTarget.MU_Y, NuisanceTarget.MU_C, NuisanceTarget.MU_T)


def parse_learners(payload: Optional[Dict[str, Any]]) -> Dict[str, LearnerSpec]:
    payload = dict(payload or {})
    unknown = set(payload) - set(NuisanceTarget.values) - {"default"}
    if unknown:
        raise ConfigurationError(
            "unknown learner targets %(targets)s", code="learners", params={"targets": sorted(unknown)}
        )
    default = payload.pop("default", None)
    specs = {}
    if default is not None:
        for target in OUTCOME_TARGETS:
            specs[str(target)] = LearnerSpec.from_dict(default, target=str(target))
    for target, spec in payload.items():
        specs[target] = LearnerSpec.from_dict(spec, target=target)
    return specs


@dataclass
class RunConfig:
    schema: Optional[DatasetSchema] = None
    problem: Dict[str, Any] = field(default_factory=dict)
    learners: Dict[str, LearnerSpec] = field(default_factory=dict)
    source: Optional[Path] = None

    @classmethod
    def from_dict(cls, payload: Dict[str, Any], source: Optional[Path] = None) -> "RunConfig":
        if not isinstance(payload, dict):
            raise ConfigurationError("configuration must be a JSON object", code="config")
        unknown = set(payload) - set(SECTIONS)
        if unknown:
            raise ConfigurationError(
                "unknown configuration sections %(sections)s", code="config", params={"sections": sorted(unknown)}
            )
        schema = payload.get("schema")
        return cls(
            schema=DatasetSchema.from_dict(schema) if schema is not None else None,
            problem=dict(payload.get("problem") or {}),
            learners=parse_learners(payload.get("learners")),
            source=source,
        )

    def problem_config(self, **overrides) -> ProblemConfig:
        return ProblemConfig.from_dict(self.problem, **overrides)


def load_run_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except FileNotFoundError:
        raise ConfigurationError("config file %(path)s not found", code="config", params={"path": path}) from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(
            "config file %(path)s is not valid JSON: %(error)s", code="config", params={"path": path, "error": exc}
        ) from exc
    logger.debug(f"Loaded run config from {path}")
    return RunConfig.from_dict(payload, source=path)
