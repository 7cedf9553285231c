"""Deterministic on-disk formats for traces and batch summaries.

Every float is written with 17 significant digits, so identical runs produce
byte-identical files and the files round-trip through standard parsers
without loss. Time series go to CSV (or JSONL on request), ancestry records
to JSONL, reduced genealogies to Newick text.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .engine import (
    KIND_DEATH, EVENT_KIND_NAMES, Trace, lineage_of, mass_series,
)
from .fk import _ratio_with_se


def fmt17(x: float) -> str:
    return f"{float(x):.17g}"


def dumps_json(obj) -> str:
    """JSON text with floats at 17 significant digits (insertion-ordered keys)."""
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            raise ValueError(f"cannot encode non-finite float {x}")
        return fmt17(x)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return dumps_json(obj.tolist())
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(dumps_json(v) for v in obj) + "]"
    if isinstance(obj, dict):
        items = (f"{json.dumps(str(k))}: {dumps_json(v)}" for k, v in obj.items())
        return "{" + ", ".join(items) + "}"
    raise TypeError(f"cannot encode {type(obj).__name__}")


def write_json(obj, path) -> None:
    Path(path).write_text(dumps_json(obj) + "\n")


def _event_rows(trace: Trace):
    for k in range(trace.event_count):
        kind = int(trace.ev_kind[k])
        child = int(trace.ev_child[k])
        who = child if kind != KIND_DEATH else int(trace.ev_subject[k])
        yield (float(trace.ev_time[k]), EVENT_KIND_NAMES[kind],
               int(trace.ev_subject[k]), child, trace.trait[who])


def write_events(trace: Trace, path, fmt: str = "csv") -> None:
    """Event log: births carry the child's trait, deaths the decedent's."""
    d = trace.config.dimension
    lines = []
    if fmt == "csv":
        lines.append("time,kind,subject,child," +
                     ",".join(f"trait_{i}" for i in range(d)))
        for t, kind, subj, child, trait in _event_rows(trace):
            lines.append(f"{fmt17(t)},{kind},{subj},{child}," +
                         ",".join(fmt17(v) for v in trait))
    elif fmt == "jsonl":
        for t, kind, subj, child, trait in _event_rows(trace):
            lines.append(dumps_json({"time": t, "kind": kind, "subject": subj,
                                     "child": child, "trait": trait}))
    else:
        raise ValueError(f"unknown format {fmt!r}")
    Path(path).write_text("\n".join(lines) + "\n" if lines else "")


def write_mass(trace: Trace, path, fmt: str = "csv") -> None:
    """Piecewise-constant population size: a row at 0 and after each event."""
    n = trace.config.n
    steps = np.where(trace.ev_kind == KIND_DEATH, -1, 1)
    counts = trace.initial_count + np.concatenate([[0], np.cumsum(steps)])
    times = np.concatenate([[0.0], trace.ev_time])
    lines = []
    if fmt == "csv":
        lines.append("time,count,mass")
        for t, c in zip(times, counts):
            lines.append(f"{fmt17(t)},{c},{fmt17(c / n)}")
    elif fmt == "jsonl":
        for t, c in zip(times, counts):
            lines.append(dumps_json({"time": float(t), "count": int(c),
                                     "mass": c / n}))
    else:
        raise ValueError(f"unknown format {fmt!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_forest(trace: Trace, path) -> None:
    """One ancestry node per line; death is null while the node is alive."""
    lines = []
    for i in range(trace.node_count):
        dth = float(trace.death[i])
        lines.append(dumps_json({
            "id": i, "parent": int(trace.parent[i]),
            "birth": float(trace.birth[i]),
            "death": None if math.isinf(dth) else dth,
            "trait": trace.trait[i], "mutant": bool(trace.is_mutant[i])}))
    Path(path).write_text("\n".join(lines) + "\n" if lines else "")


def genealogy_newick(trace: Trace, t: float | None = None) -> str:
    """Reduced genealogy of individuals alive at t, one tree per founder.

    Interior vertices are birth events whose two sides both lead to alive
    descendants; stretches without branching collapse into single edges, so
    branch lengths are the times between consecutive retained births (leaves
    extend to t).
    """
    if t is None:
        t = trace.final_time
    alive = set(int(i) for i in trace.alive_ids(t))
    nnode = trace.node_count
    children = [[] for _ in range(nnode)]
    for c in range(nnode):
        p = int(trace.parent[c])
        if p >= 0 and trace.birth[c] <= t:
            children[p].append(c)
    has_alive = [False] * nnode
    for v in range(nnode - 1, -1, -1):
        has_alive[v] = v in alive or any(has_alive[c] for c in children[v])

    def render(root: int) -> str:
        out = []
        stack = [("node", root, 0.0)]
        while stack:
            task = stack.pop()
            if task[0] == "text":
                out.append(task[1])
                continue
            _, v, t0 = task
            while True:
                evs = [c for c in children[v]
                       if trace.birth[c] > t0 and has_alive[c]]
                if not evs:
                    out.append(f"{v}:{fmt17(t - t0)}")
                    break
                c0 = evs[0]
                s = float(trace.birth[c0])
                if v in alive or len(evs) > 1:
                    out.append("(")
                    stack.append(("text", f"):{fmt17(s - t0)}"))
                    stack.append(("node", c0, s))
                    stack.append(("text", ","))
                    stack.append(("node", v, s))
                    break
                v = c0  # the branch dies out; the lineage continues below
        return "".join(out)

    return "".join(render(f) + ";\n"
                   for f in range(trace.initial_count) if has_alive[f])


def write_genealogy(trace: Trace, path, t: float | None = None) -> None:
    Path(path).write_text(genealogy_newick(trace, t))


def write_lineages(trace: Trace, path, t: float, count: int,
                   rng: np.random.Generator) -> None:
    """Uniformly sampled alive individuals with their stopped trait paths."""
    ids = trace.alive_ids(t)
    lines = []
    for _ in range(count if len(ids) else 0):
        node = int(ids[rng.integers(len(ids))])
        y = lineage_of(trace, node, t=t)
        lines.append(dumps_json({"node": node, "sampled_at": t,
                                 "times": y.jump_times, "values": y.values}))
    Path(path).write_text("\n".join(lines) + "\n" if lines else "")


def run_summary(trace: Trace) -> dict:
    T = trace.final_time
    count = len(trace.alive_ids(T))
    return {"label": trace.config.label, "n": trace.config.n,
            "horizon": trace.config.horizon, "replicate": trace.replicate,
            "seed": trace.base_seed, "events": trace.event_count,
            "final_time": T, "final_count": count,
            "final_mass": count / trace.config.n, "extinct": count == 0,
            "exploded": trace.exploded}


def batch_summary(results, grid) -> dict:
    """Per-grid-point mass statistics and trait-intensity ratios.

    Takes ReplicateResults carrying traces. Failed replicates are counted
    and excluded; the intensity at a grid point is null when every surviving
    replicate is extinct there.
    """
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    traces = [r.value for r in results if r.ok]
    failures = [{"replicate": r.replicate, "error": r.error}
                for r in results if not r.ok]
    if not traces:
        raise ValueError("no successful replicates to summarize")
    masses = np.stack([mass_series(tr, grid) for tr in traces])
    mean = masses.mean(axis=0)
    var = masses.var(axis=0, ddof=1) if len(traces) > 1 else np.zeros_like(mean)
    se = np.sqrt(var / len(traces))
    intensity, intensity_se = [], []
    for j, t in enumerate(grid):
        num, den = [], []
        for tr in traces:
            ids = tr.alive_ids(t)
            den.append(len(ids) / tr.config.n)
            num.append(float(tr.trait[ids, 0].sum()) / tr.config.n)
        if sum(den) == 0.0:
            intensity.append(None)
            intensity_se.append(None)
            continue
        val, err = _ratio_with_se(np.asarray(num), np.asarray(den))
        intensity.append(val)
        intensity_se.append(err)
    extinct = int(sum(len(tr.alive_ids(grid[-1])) == 0 for tr in traces))
    return {"replicates": len(results), "failed": len(failures),
            "failures": failures, "extinct_at_end": extinct,
            "times": grid, "mass_mean": mean, "mass_var": var,
            "mass_ci_low": mean - 1.96 * se, "mass_ci_high": mean + 1.96 * se,
            "intensity": intensity, "intensity_se": intensity_se}
