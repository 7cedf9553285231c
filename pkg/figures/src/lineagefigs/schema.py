"""Validating readers for the simulator's documented output files.

Every loader checks the full file against its schema before returning, so a
renderer that got past loading can no longer fail on malformed input and no
partial image is ever written. Errors carry the file name and the first
offending line or field.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

EVENT_KINDS = ("clonal-birth", "mutant-birth", "death")


class SchemaError(ValueError):
    """Input file does not match its documented schema."""


def _fail(path: Path, msg: str):
    raise SchemaError(f"{path.name}: {msg}")


def _require(path: Path, cond: bool, msg: str) -> None:
    if not cond:
        _fail(path, msg)


def _float(path: Path, s, where: str) -> float:
    try:
        v = float(s)
    except (TypeError, ValueError):
        _fail(path, f"{where}: not a number: {s!r}")
    if not math.isfinite(v):
        _fail(path, f"{where}: non-finite value {s!r}")
    return v


def _json_lines(path: Path):
    text = path.read_text()
    for k, line in enumerate(text.splitlines()):
        try:
            yield k, json.loads(line)
        except json.JSONDecodeError as exc:
            _fail(path, f"line {k + 1}: invalid JSON ({exc.msg})")


def _json_file(path: Path) -> dict:
    if not path.is_file():
        raise SchemaError(f"{path.name}: missing file {path}")
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        _fail(path, f"invalid JSON ({exc.msg})")
    if not isinstance(obj, dict):
        _fail(path, "top level is not an object")
    return obj


def _file(indir, name: str) -> Path:
    p = Path(indir) / name
    if not p.is_file():
        raise SchemaError(f"{name}: missing file {p}")
    return p


def load_run_summary(indir) -> dict:
    """summary.json written next to a single trace."""
    path = _file(indir, "summary.json")
    obj = _json_file(path)
    for key in ("label", "n", "horizon", "final_time", "final_count",
                "final_mass", "extinct"):
        _require(path, key in obj, f"missing field {key!r}")
    _require(path, isinstance(obj["n"], int) and obj["n"] >= 1,
             f"n must be a positive integer, got {obj['n']!r}")
    for key in ("horizon", "final_time", "final_mass"):
        obj[key] = _float(path, obj[key], key)
    _require(path, 0.0 <= obj["final_time"] <= obj["horizon"] + 1e-12,
             "final_time outside [0, horizon]")
    return obj


def load_batch_summary(indir) -> dict:
    """summary.json written by a replicate batch (per-grid-point statistics)."""
    path = _file(indir, "summary.json")
    obj = _json_file(path)
    for key in ("replicates", "times", "mass_mean", "mass_ci_low",
                "mass_ci_high"):
        _require(path, key in obj, f"missing field {key!r} (not a batch summary?)")
    times = [_float(path, v, f"times[{i}]") for i, v in enumerate(obj["times"])]
    _require(path, all(b >= a for a, b in zip(times, times[1:])),
             "times not nondecreasing")
    out = {"replicates": obj["replicates"], "times": np.asarray(times)}
    for key in ("mass_mean", "mass_ci_low", "mass_ci_high"):
        vals = obj[key]
        _require(path, isinstance(vals, list) and len(vals) == len(times),
                 f"{key} length differs from times")
        out[key] = np.asarray([_float(path, v, f"{key}[{i}]")
                               for i, v in enumerate(vals)])
    return out


def load_fk_report(indir) -> dict:
    path = _file(indir, "fk-report.json")
    obj = _json_file(path)
    for key in ("mode", "estimator", "se", "series"):
        _require(path, key in obj, f"missing field {key!r}")
    series = obj["series"]
    _require(path, isinstance(series, dict), "series is not an object")
    for key in ("times", "values", "se"):
        _require(path, key in series, f"missing field series.{key!r}")
    times = [_float(path, v, f"series.times[{i}]")
             for i, v in enumerate(series["times"])]
    values = [_float(path, v, f"series.values[{i}]")
              for i, v in enumerate(series["values"])]
    ses = [_float(path, v, f"series.se[{i}]")
           for i, v in enumerate(series["se"])]
    _require(path, len(times) == len(values) == len(ses) and len(times) >= 1,
             "series arrays empty or of unequal length")
    _require(path, all(s >= 0 for s in ses), "negative standard error")
    return {"mode": str(obj["mode"]), "times": np.asarray(times),
            "values": np.asarray(values), "se": np.asarray(ses)}


def load_mass(indir) -> dict:
    """mass.csv: piecewise-constant time,count,mass rows."""
    path = _file(indir, "mass.csv")
    lines = path.read_text().splitlines()
    _require(path, bool(lines) and lines[0] == "time,count,mass",
             "bad or missing header (want 'time,count,mass')")
    times, counts, masses = [], [], []
    for k, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        _require(path, len(parts) == 3, f"line {k}: expected 3 fields")
        t = _float(path, parts[0], f"line {k} time")
        c = _float(path, parts[1], f"line {k} count")
        m = _float(path, parts[2], f"line {k} mass")
        _require(path, c >= 0 and c == int(c), f"line {k}: count not a whole number")
        _require(path, m >= 0, f"line {k}: negative mass")
        times.append(t)
        counts.append(int(c))
        masses.append(m)
    _require(path, len(times) >= 1, "no rows")
    _require(path, times[0] == 0.0, "first row must be at time 0")
    _require(path, all(b >= a for a, b in zip(times, times[1:])),
             "times not nondecreasing")
    for c, m in zip(counts, masses):
        if c > 0:
            n = c / m
            break
    else:
        n = 1.0
    for k, (c, m) in enumerate(zip(counts, masses), start=2):
        _require(path, abs(m * n - c) < 1e-6 * max(1.0, c),
                 f"line {k}: mass inconsistent with count")
    return {"times": np.asarray(times), "counts": np.asarray(counts),
            "masses": np.asarray(masses)}


def load_forest(indir) -> dict:
    """forest.jsonl: one ancestry node per line, ids in line order."""
    path = _file(indir, "forest.jsonl")
    keys = {"id", "parent", "birth", "death", "trait", "mutant"}
    parent, birth, death, trait, mutant = [], [], [], [], []
    dim = None
    for k, obj in _json_lines(path):
        where = f"line {k + 1}"
        _require(path, isinstance(obj, dict) and set(obj) == keys,
                 f"{where}: fields must be exactly {sorted(keys)}")
        _require(path, obj["id"] == k, f"{where}: id {obj['id']!r} != line index {k}")
        p = obj["parent"]
        _require(path, isinstance(p, int) and -1 <= p < k,
                 f"{where}: parent must be -1 or an earlier id, got {p!r}")
        b = _float(path, obj["birth"], f"{where} birth")
        _require(path, b >= 0.0, f"{where}: negative birth time")
        if p >= 0:
            _require(path, b >= birth[p], f"{where}: born before its parent")
        d = obj["death"]
        if d is not None:
            d = _float(path, d, f"{where} death")
            _require(path, d >= b, f"{where}: death before birth")
        y = obj["trait"]
        _require(path, isinstance(y, list) and y, f"{where}: trait must be a nonempty list")
        y = [_float(path, v, f"{where} trait") for v in y]
        if dim is None:
            dim = len(y)
        _require(path, len(y) == dim, f"{where}: trait dimension changed")
        _require(path, isinstance(obj["mutant"], bool), f"{where}: mutant must be boolean")
        parent.append(p)
        birth.append(b)
        death.append(math.inf if d is None else d)
        trait.append(y)
        mutant.append(obj["mutant"])
    _require(path, len(parent) >= 1, "no nodes")
    return {"parent": np.asarray(parent, dtype=int),
            "birth": np.asarray(birth),
            "death": np.asarray(death),
            "trait": np.asarray(trait),
            "mutant": np.asarray(mutant, dtype=bool)}
