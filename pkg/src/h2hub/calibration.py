"""Reading, writing and validating calibration files.

Calibration files are YAML mappings (JSON files are accepted too, since JSON
parses as YAML).  Time-varying entries may be a scalar, a per-period list, or
``{range: [first, last]}`` for a linear ramp over the horizon.  Per-type
entries are keyed by ``green``/``blue``/``grey`` and per-producer entries by
``SHP``/``CHPE``.
"""

from __future__ import annotations

import hashlib
import json
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .model import PRODUCERS, TYPES, DomainError, MarketCalibration

DEFAULT_FILE = "default_calibration.yaml"

SCALARS = ("theta", "r0", "gamma", "rho", "beta_pen", "tau", "vartheta")
PER_PERIOD = ("rl", "q", "alpha", "delta")
PER_TYPE = ("s1", "s2")
PER_TYPE_PERIOD = ("d0", "b")
PER_TYPE_PRODUCER_PERIOD = ("k", "c")
REQUIRED = ("horizon",) + SCALARS + PER_PERIOD + PER_TYPE + PER_TYPE_PERIOD + PER_TYPE_PRODUCER_PERIOD + (
    "lead_time",
)
OPTIONAL = ("start_year", "demand_index", "units", "note")


class CalibrationError(ValueError):
    """Raised with every problem found in a calibration file."""

    def __init__(self, issues: list[str], source: str = "<calibration>"):
        self.issues = list(issues)
        self.source = source
        super().__init__(f"{source}: " + "; ".join(self.issues))


def _line_index(text: str) -> dict[tuple, int]:
    """Map key paths of a YAML/JSON document to 1-based line numbers."""
    lines: dict[tuple, int] = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return lines

    def walk(node, path):
        lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for key, value in node.value:
                walk(value, path + (str(key.value),))
                lines[path + (str(key.value),)] = key.start_mark.line + 1

    if root is not None:
        walk(root, ())
    return lines


class _Reader:
    def __init__(self, data: dict, horizon: int, lines: dict):
        self.data = data
        self.T = horizon
        self.lines = lines
        self.issues: list[str] = []

    def where(self, path) -> str:
        for n in range(len(path), 0, -1):
            if tuple(path[:n]) in self.lines:
                return f"line {self.lines[tuple(path[:n])]}: "
        return ""

    def fail(self, path, msg):
        self.issues.append(f"{self.where(path)}{'.'.join(path)}: {msg}")

    def series(self, value, path) -> np.ndarray | None:
        try:
            if isinstance(value, dict):
                if set(value) != {"range"} or len(value["range"]) != 2:
                    raise ValueError("expected {range: [first, last]}")
                a, b = (float(v) for v in value["range"])
                return np.linspace(a, b, self.T)
            if isinstance(value, (list, tuple)):
                arr = np.array([float(v) for v in value])
                if arr.shape != (self.T,):
                    raise ValueError(f"expected {self.T} values, got {len(value)}")
                return arr
            if isinstance(value, bool) or value is None:
                raise ValueError(f"expected a number, got {value!r}")
            return np.full(self.T, float(value))
        except (TypeError, ValueError) as exc:
            self.fail(path, str(exc))
            return None

    def scalar(self, value, path) -> float | None:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(path, f"expected a number, got {value!r}")
            return None
        return float(value)

    def keyed(self, value, path, keys, inner):
        if not isinstance(value, dict):
            self.fail(path, f"expected a mapping with keys {', '.join(keys)}")
            return None
        lower = {str(k).lower(): k for k in value}
        out = []
        for key in keys:
            if key.lower() not in lower:
                self.fail(path + (key,), "missing")
                out.append(None)
                continue
            out.append(inner(value[lower[key.lower()]], path + (str(lower[key.lower()]),)))
        extra = set(lower) - {k.lower() for k in keys}
        for key in sorted(extra):
            self.fail(path + (str(lower[key]),), "unknown key")
        return None if any(o is None for o in out) else out


def _type_keys():
    return [i.label for i in TYPES]


def _producer_keys():
    return [j.label for j in PRODUCERS]


def calibration_from_dict(data: dict, source: str = "<calibration>", lines: dict | None = None) -> MarketCalibration:
    """Build and fully validate a calibration from a parsed mapping."""
    lines = lines or {}
    if not isinstance(data, dict):
        raise CalibrationError(["top level must be a mapping"], source)
    issues = []
    for key in REQUIRED:
        if key not in data:
            issues.append(f"{key}: missing")
    for key in data:
        if key not in REQUIRED and key not in OPTIONAL:
            issues.append(f"line {lines.get((key,), '?')}: {key}: unknown key")
    horizon = data.get("horizon")
    if isinstance(horizon, bool) or not isinstance(horizon, int) or horizon < 1:
        issues.append(f"horizon: expected a positive integer, got {horizon!r}")
        raise CalibrationError(issues, source)

    rd = _Reader(data, horizon, lines)
    values = {}
    for key in SCALARS:
        if key in data:
            values[key] = rd.scalar(data[key], (key,))
    for key in PER_PERIOD:
        if key in data:
            values[key] = rd.series(data[key], (key,))
    for key in PER_TYPE:
        if key in data:
            values[key] = rd.keyed(data[key], (key,), _type_keys(), rd.scalar)
    for key in PER_TYPE_PERIOD:
        if key in data:
            values[key] = rd.keyed(data[key], (key,), _type_keys(), rd.series)
    for key in PER_TYPE_PRODUCER_PERIOD:
        if key in data:
            values[key] = rd.keyed(
                data[key], (key,), _type_keys(), lambda v, p: rd.keyed(v, p, _producer_keys(), rd.series)
            )
    if "lead_time" in data:
        values["lead_time"] = rd.keyed(data["lead_time"], ("lead_time",), _producer_keys(), rd.scalar)
    if data.get("demand_index") is not None:
        values["demand_index"] = rd.series(data["demand_index"], ("demand_index",))
    issues += rd.issues
    if issues or any(v is None for v in values.values()):
        raise CalibrationError(issues or ["invalid calibration"], source)

    try:
        cal = MarketCalibration(horizon=horizon, start_year=int(data.get("start_year", 2026)), **values)
    except DomainError as exc:
        raise CalibrationError([str(exc)], source) from exc
    problems = cal.validate()
    if problems:
        located = []
        for msg in problems:
            field = msg.split()[0].split(".")[0]
            line = lines.get((field,))
            located.append(f"line {line}: {msg}" if line else msg)
        raise CalibrationError(located, source)
    return cal


def load_calibration(path=None) -> MarketCalibration:
    """Load a calibration file; ``None`` loads the shipped default."""
    if path is None:
        text = resources.files("h2hub").joinpath("data", DEFAULT_FILE).read_text()
        source = DEFAULT_FILE
    else:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise CalibrationError([f"cannot read file: {exc.strerror}"], str(path)) from exc
        source = str(path)
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}: " if mark is not None else ""
        raise CalibrationError([f"{where}parse error: {getattr(exc, 'problem', exc)}"], source) from exc
    return calibration_from_dict(data, source, _line_index(text))


def default_calibration() -> MarketCalibration:
    return load_calibration(None)


def calibration_to_dict(cal: MarketCalibration) -> dict:
    """Explicit per-period form of a calibration (inverse of ``calibration_from_dict``)."""

    def ser(arr):
        return [float(v) for v in np.asarray(arr)]

    out = {
        "units": {"quantity": "kt", "price": "USD/kg", "money": "MUSD", "lead_time": "days"},
        "horizon": cal.horizon,
        "start_year": cal.start_year,
    }
    for key in SCALARS:
        out[key] = float(getattr(cal, key))
    for key in PER_PERIOD:
        out[key] = ser(getattr(cal, key))
    for key in PER_TYPE:
        out[key] = {i.label: float(getattr(cal, key)[i]) for i in TYPES}
    for key in PER_TYPE_PERIOD:
        out[key] = {i.label: ser(getattr(cal, key)[i]) for i in TYPES}
    for key in PER_TYPE_PRODUCER_PERIOD:
        out[key] = {i.label: {j.label: ser(getattr(cal, key)[i, j]) for j in PRODUCERS} for i in TYPES}
    out["lead_time"] = {j.label: float(cal.lead_time[j]) for j in PRODUCERS}
    out["demand_index"] = ser(cal.demand_index)
    return out


def dump_calibration(cal: MarketCalibration, path) -> None:
    path = Path(path)
    data = calibration_to_dict(cal)
    if path.suffix.lower() == ".json":
        path.write_text(json.dumps(data, indent=2, sort_keys=False) + "\n")
    else:
        path.write_text(yaml.safe_dump(data, sort_keys=False))


def calibration_hash(cal: MarketCalibration) -> str:
    """SHA-256 of the canonical JSON form of a calibration."""
    blob = json.dumps(calibration_to_dict(cal), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
