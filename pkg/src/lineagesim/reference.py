"""Slow reference implementations used by the acceptance checks and tests.

Nothing here shares algorithms with the production code paths: the Skorokhod
reference does an exhaustive search over gridded piecewise-linear time
changes, evaluating each candidate's cost directly from the definition of
the metric.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

from .paths import StepPath, eval_at, stop, _mismatch_table


def time_change_cost(y: StepPath, z: StepPath, T: float,
                     knots: np.ndarray, images: np.ndarray) -> float:
    """max(sup-norm mismatch, max |log slope|) for one piecewise-linear map.

    The map sends z-time to y-time: knots are domain breakpoints, images
    their y-times.  Breakpoints of t -> (y(L(t)), z(t)) are z's own jumps
    plus preimages of y's jumps under L; indices are carried through the
    sweep so exact alignments survive float arithmetic.
    """
    slopes = np.diff(images) / np.diff(knots)
    if np.any(slopes <= 0):
        return math.inf
    slope_cost = float(np.max(np.abs(np.log(slopes))))

    events = []
    for j, jt in enumerate(z.jump_times):
        if 0.0 < jt < T:
            events.append((float(jt), 1))
    for a in y.jump_times:
        if not (0.0 < a < T):
            continue
        k = int(np.searchsorted(images, a, side="left"))
        if k < len(images) and images[k] == a:
            pre = float(knots[k])
        else:
            k -= 1
            pre = float(knots[k] + (a - images[k]) / slopes[k])
        events.append((pre, 0))
    events.sort(key=lambda e: e[0])

    M = _mismatch_table(y.values, z.values)
    cy = cz = 0
    value_cost = M[0][0]
    m = 0
    while m < len(events):
        t0 = events[m][0]
        while m < len(events) and events[m][0] == t0:
            if events[m][1] == 0:
                cy += 1
            else:
                cz += 1
            m += 1
        value_cost = max(value_cost, M[cy][cz])
    value_cost = max(value_cost,
                     float(np.linalg.norm(eval_at(y, T) - eval_at(z, T))))
    return max(slope_cost, value_cost)


def skorokhod_bruteforce(y: StepPath, z: StepPath, T: float,
                         fill: int = 4) -> float:
    """Brute-force J1 distance over gridded piecewise-linear time changes.

    The breakpoint grid contains every jump time of both paths plus `fill`
    uniform points, and every subset of grid points may serve as domain
    breakpoints with images drawn from the same grid.  Exponential in the
    grid size; only suitable for paths with a handful of jumps.
    """
    y, z = stop(y, T), stop(z, T)
    jumps = set(float(t) for t in np.concatenate([y.jump_times, z.jump_times])
                if 0.0 < t < T)
    grid = sorted(jumps | set(np.linspace(0.0, T, fill + 2)[1:-1]))
    pts = np.asarray(grid)
    best = time_change_cost(y, z, T, np.array([0.0, T]), np.array([0.0, T]))
    for k in range(1, len(pts) + 1):
        for dom in itertools.combinations(pts, k):
            for img in itertools.combinations(pts, k):
                knots = np.concatenate([[0.0], dom, [T]])
                images = np.concatenate([[0.0], img, [T]])
                c = time_change_cost(y, z, T, knots, images)
                if c < best:
                    best = c
    return best
