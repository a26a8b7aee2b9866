"""
Run manifests and JSON output.

Every JSON file the commands write embeds a manifest naming the command, a
digest of the effective configuration, digests of the input files, the
master seed and the tool version. Wall-clock time is only recorded when
``POLICY['RECORD_TIMING']`` is on, so reruns with equal inputs produce
byte-identical files by default.
"""

import functools
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Optional

import numpy as np
from django.conf import settings

from .. import __version__

logger = logging.getLogger(__name__)


def json_ready(value: Any) -> Any:
    """Convert numpy scalars/arrays and non-finite floats into JSON-safe values."""
    if isinstance(value, dict):
        return {str(key): json_ready(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_ready(item) for item in value]
    if isinstance(value, np.ndarray):
        return [json_ready(item) for item in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return None
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    return value


def config_digest(payload: Dict[str, Any]) -> str:
    canonical = json.dumps(json_ready(payload), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def file_digest(path) -> str:
    sha = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            sha.update(chunk)
    return sha.hexdigest()


def cache_key(prefix: str, payload: Dict[str, Any]) -> str:
    canonical = json.dumps(json_ready(payload), sort_keys=True)
    return f"{prefix}:{hashlib.md5(canonical.encode('utf-8')).hexdigest()}"


@dataclass
class RunManifest:
    command: str
    config_digest: str
    input_digests: Dict[str, str] = field(default_factory=dict)
    seed: Optional[int] = None
    tool_version: str = __version__
    wall_clock_seconds: Optional[float] = None

    @classmethod
    def create(cls, command: str, config: Dict[str, Any], inputs: Iterable = (), seed: Optional[int] = None) -> "RunManifest":
        digests = {str(path): file_digest(path) for path in inputs if path}
        return cls(command=command, config_digest=config_digest(config), input_digests=digests, seed=seed)

    def to_dict(self) -> Dict[str, Any]:
        payload = {
            "command": self.command,
            "config_digest": self.config_digest,
            "input_digests": dict(self.input_digests),
            "seed": self.seed,
            "tool_version": self.tool_version,
        }
        if self.wall_clock_seconds is not None:
            payload["wall_clock_seconds"] = self.wall_clock_seconds
        return payload


class Stopwatch:
    """Context manager that stamps elapsed seconds on a manifest when timing is enabled."""

    def __init__(self, manifest: RunManifest):
        self.manifest = manifest
        self.start_time = None

    def __enter__(self):
        self.start_time = time.time()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        elapsed = time.time() - self.start_time
        logger.info(f"{self.manifest.command} finished in {elapsed:.2f}s")
        if settings.POLICY.get("RECORD_TIMING"):
            self.manifest.wall_clock_seconds = round(elapsed, 3)


def timed(func_name: str = None):
    """Decorator logging a function's execution time at DEBUG level."""
    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            start_time = time.time()
            result = func(*args, **kwargs)
            name = func_name or f"{func.__module__}.{func.__name__}"
            logger.debug(f"{name} took {time.time() - start_time:.3f}s")
            return result
        return wrapper
    return decorator


def write_json(path, payload: Dict[str, Any], manifest: Optional[RunManifest] = None) -> Path:
    path = Path(path)
    body = dict(payload)
    if manifest is not None:
        body["manifest"] = manifest.to_dict()
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(json_ready(body), fh, indent=2)
        fh.write("\n")
    logger.info(f"Wrote {path}")
    return path
