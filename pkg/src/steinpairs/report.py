"""Versioned JSON reports and CSV sample dumps."""

from __future__ import annotations

import csv
import datetime as _dt
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from .errors import IoFailure

SCHEMA_VERSION = "1.0"
TIMESTAMP_KEY = "timestamp"


def _encode(obj: Any) -> Any:
    """Make ``obj`` strict-JSON serializable; non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): _encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return obj


def _decode(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _decode(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode(v) for v in obj]
    if obj in ("inf", "-inf", "nan"):
        return float(obj)
    return obj


@dataclass
class Report:
    """The machine-readable outcome of one experiment."""

    config_echo: dict
    theorem: str
    terms: list = field(default_factory=list)
    total: float = 0.0
    discrepancy: list = field(default_factory=list)
    sliced_w1: dict | None = None
    provenance: dict = field(default_factory=dict)
    version: str = SCHEMA_VERSION
    timestamp: str = ""

    def to_dict(self) -> dict:
        return _encode(
            {
                "version": self.version,
                "config_echo": self.config_echo,
                "theorem": self.theorem,
                "terms": self.terms,
                "total": self.total,
                "discrepancy": self.discrepancy,
                "sliced_w1": self.sliced_w1,
                "provenance": self.provenance,
                TIMESTAMP_KEY: self.timestamp,
            }
        )

    @classmethod
    def from_dict(cls, data: dict) -> "Report":
        data = _decode(data)
        return cls(
            config_echo=data["config_echo"],
            theorem=data["theorem"],
            terms=data.get("terms", []),
            total=data.get("total", 0.0),
            discrepancy=data.get("discrepancy", []),
            sliced_w1=data.get("sliced_w1"),
            provenance=data.get("provenance", {}),
            version=data.get("version", SCHEMA_VERSION),
            timestamp=data.get(TIMESTAMP_KEY, ""),
        )


def now_stamp() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def dumps_report(report: Report) -> str:
    return json.dumps(report.to_dict(), indent=2, allow_nan=False) + "\n"


def parse_report(text: str) -> Report:
    return Report.from_dict(json.loads(text))


def without_timestamp_line(text: str) -> str:
    """The serialized report with its timestamp line removed, for byte-level comparisons."""
    key = f'  "{TIMESTAMP_KEY}": '
    return "".join(line for line in text.splitlines(keepends=True) if not line.startswith(key))


def load_schema() -> dict:
    """The JSON Schema of serialized reports shipped with the package."""
    return json.loads(resources.files(__package__).joinpath("report.schema.json").read_text())


def strip_timestamp(text: str) -> dict:
    """The report as a dict without its timestamp, for reproducibility comparisons."""
    data = json.loads(text)
    data.pop(TIMESTAMP_KEY, None)
    return data


def write_samples_csv(samples, path) -> None:
    """One row per sampled vector with header W1..Wd."""
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"W{i + 1}" for i in range(x.shape[1])])
            writer.writerows([repr(float(v)) for v in row] for row in x)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def emit_report(report: Report, format: str = "json", path=None, samples=None) -> str | None:
    """Write ``report`` as JSON (or ``samples`` as CSV) to ``path``; return the text when ``path`` is None."""
    if format == "json":
        text = dumps_report(report)
        if path is None:
            return text
        try:
            Path(path).write_text(text)
        except OSError as exc:
            raise IoFailure(f"cannot write {path}: {exc}") from exc
        return None
    if format == "csv":
        if samples is None:
            raise ValueError("CSV output needs samples")
        if path is None:
            raise ValueError("CSV output needs a path")
        write_samples_csv(samples, path)
        return None
    raise ValueError(f"unknown format {format!r}")


__all__ = [
    "Report",
    "SCHEMA_VERSION",
    "dumps_report",
    "emit_report",
    "load_schema",
    "now_stamp",
    "parse_report",
    "strip_timestamp",
    "without_timestamp_line",
    "write_samples_csv",
]
