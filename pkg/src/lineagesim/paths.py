"""Cadlag step paths on [0, T] and an exact Skorokhod J1 distance.

A step path is a right-continuous piecewise-constant function of time with
finitely many jumps, anchored at time 0.  Ancestral trait lineages are step
paths: the value at time u is the trait carried by the ancestor alive at u.

The distance used throughout is the strong J1 metric

    d(y, z) = inf over time changes L of
              max( sup_t |y(L(t)) - z(t)|,  sup_{s<t} |log((L(t)-L(s))/(t-s))| )

with L ranging over increasing bijections of [0, T].  For step paths the
infimum is attained by a piecewise-linear time change that aligns a monotone
matching of jump times, which reduces the search to a minimax dynamic program
over matchings (O(p^2 q^2) in the jump counts p, q).  Value mismatch is
measured with the Euclidean norm on R^d.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np


class PathDomainError(ValueError):
    """Raised when a path operation is asked about a time outside its domain."""


class PremiseNotSatisfied(Exception):
    """Concatenation-stability check called with inputs that violate its premise."""


@dataclass(frozen=True)
class StepPath:
    """Right-continuous step function [0, inf) -> R^d.

    jump_times[0] must be exactly 0.0 (the initial value is a "jump" at the
    origin); times are strictly increasing, values[k] holds on
    [jump_times[k], jump_times[k+1]).
    """

    jump_times: np.ndarray  # (m,)
    values: np.ndarray      # (m, d)

    def __post_init__(self):
        times = np.asarray(self.jump_times, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if times.ndim != 1 or vals.ndim != 2 or len(times) != len(vals):
            raise ValueError("jump_times (m,) and values (m, d) must align")
        if len(times) == 0 or times[0] != 0.0:
            raise ValueError("first jump time must be exactly 0.0")
        if len(times) > 1 and not np.all(np.diff(times) > 0):
            raise ValueError("jump times must be strictly increasing")
        object.__setattr__(self, "jump_times", times)
        object.__setattr__(self, "values", vals)

    @property
    def dimension(self) -> int:
        return self.values.shape[1]

    def at(self, t: float) -> np.ndarray:
        return eval_at(self, t)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, StepPath)
            and np.array_equal(self.jump_times, other.jump_times)
            and np.array_equal(self.values, other.values)
        )


def step_path(times, values) -> StepPath:
    """Build a StepPath; scalar values are promoted to dimension 1."""
    return StepPath(np.asarray(times, dtype=float), np.asarray(values, dtype=float))


def constant_path(value, d: int | None = None) -> StepPath:
    v = np.atleast_1d(np.asarray(value, dtype=float))
    if d is not None and v.size == 1:
        v = np.full(d, v[0])
    return StepPath(np.zeros(1), v[None, :])


def eval_at(path: StepPath, t: float) -> np.ndarray:
    """Value at time t: the largest jump index j with jump_times[j] <= t."""
    if t < 0:
        raise PathDomainError(f"path evaluated at negative time {t}")
    j = int(np.searchsorted(path.jump_times, t, side="right")) - 1
    return path.values[j]


def eval_many(path: StepPath, ts: np.ndarray) -> np.ndarray:
    """Vectorized eval_at for an array of times (all >= 0)."""
    ts = np.asarray(ts, dtype=float)
    if np.any(ts < 0):
        raise PathDomainError("path evaluated at negative time")
    idx = np.searchsorted(path.jump_times, ts, side="right") - 1
    return path.values[idx]


def stop(path: StepPath, t: float) -> StepPath:
    """The stopped path y^t = y(. ^ t): jumps after t are dropped."""
    if t < 0:
        raise PathDomainError(f"cannot stop a path at negative time {t}")
    keep = path.jump_times <= t
    return StepPath(path.jump_times[keep], path.values[keep])


def concat(y: StepPath, t: float, w: StepPath) -> StepPath:
    """Concatenation (y|t|w): y on [0, t), then w time-shifted by t.

    A jump is inserted at t only when w(0) differs from y(t-); equality is
    exact float comparison.
    """
    if t < 0:
        raise PathDomainError(f"cannot concatenate at negative time {t}")
    if y.dimension != w.dimension:
        raise ValueError("cannot concatenate paths of different dimensions")
    if t == 0.0:
        return StepPath(w.jump_times.copy(), w.values.copy())
    keep = y.jump_times < t
    times = [y.jump_times[keep]]
    vals = [y.values[keep]]
    left_end = y.values[keep][-1]  # keep[0] is True because t > 0
    if not np.array_equal(left_end, w.values[0]):
        times.append(np.array([t]))
        vals.append(w.values[:1])
    if len(w.jump_times) > 1:
        times.append(w.jump_times[1:] + t)
        vals.append(w.values[1:])
    return StepPath(np.concatenate(times), np.concatenate(vals))


# --- serialization ---------------------------------------------------------

def path_to_json(path: StepPath) -> str:
    """JSON array of [time, v_1, ..., v_d] rows, one per jump."""
    rows = [[float(t)] + [float(v) for v in vec]
            for t, vec in zip(path.jump_times, path.values)]
    return json.dumps(rows)


def path_from_json(text: str) -> StepPath:
    rows = json.loads(text)
    times = [r[0] for r in rows]
    vals = [r[1:] for r in rows]
    return StepPath(np.asarray(times, float), np.asarray(vals, float))


# --- time changes ----------------------------------------------------------

@dataclass(frozen=True)
class TimeChange:
    """Piecewise-linear increasing bijection of [0, T], fixing 0 and T."""

    knots: np.ndarray   # domain breakpoints, knots[0] = 0, knots[-1] = T
    images: np.ndarray  # images[0] = 0, images[-1] = T

    def __post_init__(self):
        k = np.asarray(self.knots, dtype=float)
        v = np.asarray(self.images, dtype=float)
        if k.shape != v.shape or k.ndim != 1 or len(k) < 2:
            raise ValueError("knots and images must be matching 1-d arrays")
        if k[0] != 0.0 or v[0] != 0.0 or k[-1] != v[-1]:
            raise ValueError("a time change must map 0 to 0 and T to T")
        if not (np.all(np.diff(k) > 0) and np.all(np.diff(v) > 0)):
            raise ValueError("a time change must be strictly increasing")
        object.__setattr__(self, "knots", k)
        object.__setattr__(self, "images", v)

    @property
    def horizon(self) -> float:
        return float(self.knots[-1])

    def apply(self, u):
        return np.interp(u, self.knots, self.images)

    def inverse(self) -> "TimeChange":
        return TimeChange(self.images.copy(), self.knots.copy())

    def max_log_slope(self) -> float:
        slopes = np.diff(self.images) / np.diff(self.knots)
        return float(np.max(np.abs(np.log(slopes))))


def lambda0(s: float, r: float, T: float) -> TimeChange:
    """The two-piece time change sending s to r: linear on [0,s] and [s,T].

    Requires 0 < s <= r < T.  Its maximal log-slope is
    max(log(r/s), log((T-s)/(T-r))).
    """
    if not (0 < s <= r < T):
        raise PathDomainError(
            f"lambda0 needs 0 < s <= r < T, got s={s}, r={r}, T={T}")
    if s == r:
        return TimeChange(np.array([0.0, s, T]), np.array([0.0, s, T]))
    return TimeChange(np.array([0.0, s, T]), np.array([0.0, r, T]))


# --- exact Skorokhod distance ----------------------------------------------

def _mismatch_table(va: np.ndarray, vb: np.ndarray) -> list[list[float]]:
    """Euclidean |va[i] - vb[j]| as nested python lists (fast DP lookups)."""
    diff = va[:, None, :] - vb[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff)).tolist()


def skorokhod_distance(y: StepPath, z: StepPath, T: float) -> float:
    """Exact J1 distance between two step paths on [0, T].

    Dynamic program over monotone matchings of interior jump times; the
    candidate time change for a matching is the piecewise-linear interpolant
    of the matched pairs (plus the forced anchors 0->0 and T->T).  Unmatched
    jumps land at linearly interpolated times; each anchor interval
    contributes max(|log slope|, worst value mismatch), and the matching's
    cost is the max over its intervals.  Ties are broken toward fewer
    matched pairs.
    """
    if T <= 0:
        raise PathDomainError(f"horizon must be positive, got T={T}")
    if y.dimension != z.dimension:
        raise ValueError("paths must share a dimension")
    y, z = stop(y, T), stop(z, T)
    ta = y.jump_times.tolist()
    tb = z.jump_times.tolist()
    M = _mismatch_table(y.values, z.values)
    ny, nz = len(ta), len(tb)
    log = math.log
    INF = math.inf

    def edge_cost(i: int, j: int, ya2: float, za2: float) -> float:
        # anchor interval from (ta[i], tb[j]) to (ya2, za2)
        ya, za = ta[i], tb[j]
        dy, dz = ya2 - ya, za2 - za
        cost = abs(log(dy / dz))
        inv = dz / dy
        cy, cz = i, j
        vc = M[cy][cz]
        k, l = i + 1, j + 1
        while True:
            tyl = za + (ta[k] - ya) * inv if k < ny and ta[k] < ya2 else INF
            tzl = tb[l] if l < nz and tb[l] < za2 else INF
            if tyl == INF and tzl == INF:
                break
            if tyl < tzl:
                cy = k
                k += 1
            elif tzl < tyl:
                cz = l
                l += 1
            else:  # simultaneous landing: no crossed pair
                cy, cz = k, l
                k += 1
                l += 1
            c = M[cy][cz]
            if c > vc:
                vc = c
        return cost if cost > vc else vc

    iy = [i for i in range(1, ny) if ta[i] < T]
    jz = [j for j in range(1, nz) if tb[j] < T]

    # nodes: source anchor (0, 0), every matchable pair, sink anchor at (T, T)
    best: dict[tuple[int, int], tuple[float, int]] = {(0, 0): (0.0, 0)}
    for i2 in iy:
        for j2 in jz:
            out = None
            for (i, j), (cost, npairs) in best.items():
                if i < i2 and j < j2:
                    c = edge_cost(i, j, ta[i2], tb[j2])
                    cand = (cost if cost > c else c, npairs + 1)
                    if out is None or cand < out:
                        out = cand
            if out is not None:
                best[(i2, j2)] = out

    terminal = M[ny - 1][nz - 1]  # mismatch at the point t = T
    sink = None
    for (i, j), (cost, npairs) in best.items():
        c = edge_cost(i, j, T, T)
        c = max(cost, c, terminal)
        cand = (c, npairs)
        if sink is None or cand < sink:
            sink = cand
    return sink[0]


def sup_distance(y: StepPath, z: StepPath, T: float) -> float:
    """Uniform distance on [0, T]; an upper bound for skorokhod_distance."""
    if T <= 0:
        raise PathDomainError(f"horizon must be positive, got T={T}")
    y, z = stop(y, T), stop(z, T)
    grid = np.union1d(y.jump_times, z.jump_times)
    diff = eval_many(y, grid) - eval_many(z, grid)
    return float(np.max(np.linalg.norm(diff, axis=1)))


def check_concat_stability(y: StepPath, z: StepPath, w: StepPath,
                           s: float, r: float, eps: float, T: float) -> bool:
    """Test d((y|s|w), (z|r|w)) < 3*eps for premise-satisfying inputs.

    Premise: d(y, z) < eps and max(log(r/s), log((T-s)/(T-r))) <= eps with
    0 < s <= r < T.  A violated premise raises PremiseNotSatisfied, which is
    distinct from the check returning False.
    """
    if not (0 < s <= r < T):
        raise PremiseNotSatisfied(
            f"need 0 < s <= r < T, got s={s}, r={r}, T={T}")
    slope = max(math.log(r / s), math.log((T - s) / (T - r)))
    if slope > eps:
        raise PremiseNotSatisfied(
            f"time shift too large: max log-slope {slope:.6g} > eps {eps:.6g}")
    if skorokhod_distance(y, z, T) >= eps:
        raise PremiseNotSatisfied("d(y, z) >= eps")
    d = skorokhod_distance(concat(y, s, w), concat(z, r, w), T)
    return d < 3 * eps
