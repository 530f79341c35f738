"""Outlier gate for new floor models and the deployment journal."""
from __future__ import annotations

import datetime as dt
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .model import FloorModelRow, model_version, parse_model_csv

logger = logging.getLogger(__name__)

FIELDS = ("Regular", "Rebroadcaster")


class InsufficientHistoryError(ValueError):
    pass


def tukey_fences(values: Sequence[float], k: float = 1.5) -> tuple[float, float]:
    """Return ``(Q1 - k*IQR, Q3 + k*IQR)`` using linearly interpolated quartiles."""
    arr = np.asarray(values, dtype=float)
    if arr.size < 4:
        raise InsufficientHistoryError(f"need at least 4 values for Tukey fences, got {arr.size}")
    q1, q3 = np.percentile(arr, [25, 75])
    iqr = q3 - q1
    return float(q1 - k * iqr), float(q3 + k * iqr)


@dataclass(frozen=True)
class Outlier:
    key: tuple[str, str, str]
    field: str
    value: float
    fence: tuple[float, float]


@dataclass(frozen=True)
class ValidationReport:
    status: str  # "Pass" | "Fail"
    outliers: tuple[Outlier, ...] = ()
    warnings: tuple[str, ...] = ()
    history_models: int = 0
    fences: dict = field(default_factory=dict, compare=False)

    @property
    def passed(self) -> bool:
        return self.status == "Pass"

    def as_dict(self) -> dict:
        return {
            "status": self.status,
            "history_models": self.history_models,
            "outliers": [
                {"key": "/".join(o.key), "field": o.field, "value": o.value,
                 "low": o.fence[0], "high": o.fence[1]}
                for o in self.outliers
            ],
            "warnings": list(self.warnings),
        }


def validate_model(new_model: Sequence[FloorModelRow], history: Sequence[Sequence[FloorModelRow]],
                   k: float = 1.5, window: int = 14) -> ValidationReport:
    """Check each new floor against fences from that placement's own history.

    ``history`` is ordered oldest to newest; only the last ``window`` models
    are used. Placements with fewer than four historical values pass with a
    warning.
    """
    recent = list(history)[-window:] if window > 0 else []
    by_key: dict = {}
    for m in recent:
        for row in m:
            by_key.setdefault(row.key, []).append(row)
    outliers, warnings, fences = [], [], {}
    if not recent:
        warnings.append("no history models; validation passes by default")
    for row in sorted(new_model, key=lambda r: r.key):
        past = by_key.get(row.key, [])
        for f in FIELDS:
            try:
                fence = tukey_fences([p.floor_for(f) for p in past], k)
            except InsufficientHistoryError:
                if recent:
                    warnings.append(f"{'/'.join(row.key)} {f}: {len(past)} historical values, "
                                    "passing without a check")
                continue
            fences[(row.key, f)] = fence
            value = row.floor_for(f)
            if value < fence[0] or value > fence[1]:
                outliers.append(Outlier(row.key, f, value, fence))
    for w in warnings:
        logger.warning(w)
    return ValidationReport("Fail" if outliers else "Pass", tuple(outliers), tuple(warnings),
                            len(recent), fences)


# -- journal ------------------------------------------------------------------

ACTIONS = ("Deploy", "Rollback", "Reject")


@dataclass(frozen=True)
class DeploymentEvent:
    ts: str
    action: str
    model_version: str
    reason: str = ""

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise ValueError(f"unknown journal action {self.action!r}")

    def to_json(self) -> str:
        return json.dumps({"ts": self.ts, "action": self.action,
                           "model_version": self.model_version, "reason": self.reason},
                          sort_keys=True)


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def record_deployment(event: DeploymentEvent, journal) -> None:
    """Append one event; the file is rewritten via rename so it is never torn."""
    journal = Path(journal)
    existing = journal.read_bytes() if journal.exists() else b""
    if existing and not existing.endswith(b"\n"):
        existing += b"\n"
    _atomic_write(journal, existing + event.to_json().encode("utf-8") + b"\n")


def read_journal(journal) -> list[DeploymentEvent]:
    path = Path(journal)
    if not path.exists():
        return []
    out = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            d = json.loads(line)
            out.append(DeploymentEvent(d["ts"], d["action"], d["model_version"], d.get("reason", "")))
    return out


class ModelStore:
    """Directory holding published models by version, the served model and the journal.

    Layout: ``models/<version>.csv``, ``current.csv``, ``journal.jsonl``.
    """

    def __init__(self, root):
        self.root = Path(root)
        (self.root / "models").mkdir(parents=True, exist_ok=True)

    @property
    def journal(self) -> Path:
        return self.root / "journal.jsonl"

    @property
    def current_path(self) -> Path:
        return self.root / "current.csv"

    def events(self) -> list[DeploymentEvent]:
        return read_journal(self.journal)

    def served_version(self) -> Optional[str]:
        for e in reversed(self.events()):
            if e.action in ("Deploy", "Rollback"):
                return e.model_version
        return None

    def model_bytes(self, version: str) -> bytes:
        return (self.root / "models" / f"{version}.csv").read_bytes()

    def deployed_history(self) -> list[list[FloorModelRow]]:
        """Models in the order they were deployed (oldest first)."""
        return [parse_model_csv(self.model_bytes(e.model_version))
                for e in self.events() if e.action == "Deploy"]

    def _publish(self, data: bytes, version: str) -> None:
        stored = self.root / "models" / f"{version}.csv"
        if not stored.exists():
            _atomic_write(stored, data)
        _atomic_write(self.current_path, data)

    def deploy(self, data: bytes, k: float = 1.5, window: int = 14,
               ts: Optional[str] = None) -> ValidationReport:
        """Validate against deployed history; deploy on Pass, journal a Reject on Fail."""
        rows = parse_model_csv(data)
        version = model_version(data)
        report = validate_model(rows, self.deployed_history(), k, window)
        ts = ts or _now()
        if not report.passed:
            reason = "; ".join(f"{'/'.join(o.key)} {o.field}={o.value:.2f} outside "
                               f"[{o.fence[0]:.2f}, {o.fence[1]:.2f}]" for o in report.outliers)
            record_deployment(DeploymentEvent(ts, "Reject", version, reason), self.journal)
            return report
        self._publish(data, version)
        record_deployment(DeploymentEvent(ts, "Deploy", version, "validation passed"), self.journal)
        return report

    def rollback(self, ts: Optional[str] = None) -> str:
        """Serve the model that preceded the current one; returns its version."""
        served = [e.model_version for e in self.events() if e.action in ("Deploy", "Rollback")]
        current = self.served_version()
        previous = next((v for v in reversed(served) if v != current), None)
        if previous is None:
            raise ValueError("no earlier model to roll back to")
        self._publish(self.model_bytes(previous), previous)
        record_deployment(DeploymentEvent(ts or _now(), "Rollback", previous,
                                          f"rollback from {current}"), self.journal)
        return previous
