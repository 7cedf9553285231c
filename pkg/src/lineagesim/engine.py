"""Exact event-driven simulation of the interacting birth-death system.

Events are generated by thinning a dominating Poisson clock.  With m alive
individuals and running supremum of the mass M*, the clock runs at
m * (beta_bar + delta_bar) where

    beta_bar  = n * R_high + B_high
    delta_bar = n * R_high + D_high + U_high * M* * nu_d([0, T])

Both bounds dominate every individual rate, so candidate events can be
accepted by comparing a uniform mark theta * (beta_bar + delta_bar) against
the candidate's stacked true rates: birth first, then death, otherwise the
candidate is discarded.  Within an accepted birth the clonal/mutant split is
decided by the mutation draw itself, which realizes the same joint law as
splitting the birth band by the mutation probability.  Bounds are recomputed
after every accepted event, so a growing population only widens the clock.

Every individual is a node in a persistent forest.  Clonal children share
their parent's lineage path exactly; only founders and mutants start a new
constant segment, so lineages are reconstructed by walking a short chain of
trait-change nodes.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from multiprocessing import get_context
from typing import Callable, Iterator

import numpy as np

from .model import ConstantPathRate, ConstantRate, ModelConfig, interaction_rate
from .paths import StepPath, step_path

__all__ = [
    "AncestryNode", "PopulationState", "PopulationHistory", "Trace",
    "ReplicateResult", "ExplosionError", "simulate", "lineage_of",
    "mass_series", "state_at", "replay", "run_replicates", "rng_for",
    "KIND_CLONAL", "KIND_MUTANT", "KIND_DEATH", "EVENT_KIND_NAMES",
]

KIND_CLONAL = 0
KIND_MUTANT = 1
KIND_DEATH = 2
EVENT_KIND_NAMES = ("clonal-birth", "mutant-birth", "death")


class ExplosionError(RuntimeError):
    """Alive count reached the configured cap; carries the partial trace."""

    def __init__(self, trace: "Trace"):
        super().__init__(
            f"population explosion: {trace.config.explosion_cap} individuals "
            f"alive at t={trace.final_time:.6g}")
        self.trace = trace
        self.time = trace.final_time


@dataclass(frozen=True)
class AncestryNode:
    id: int
    parent: int              # -1 for founders
    birth: float
    death: float             # inf while alive at the end of the run
    trait: np.ndarray        # (d,)
    is_mutant: bool


@dataclass(frozen=True)
class PopulationState:
    time: float
    ids: np.ndarray          # (m,) node ids
    traits: np.ndarray       # (m, d)
    count: int
    mass: float


class PopulationHistory:
    """Read access to the population's past, as used by the death rate."""

    def __init__(self, birth: np.ndarray, death: np.ndarray, traits: np.ndarray):
        self.birth = birth
        self.death = death
        self.traits = traits

    def traits_alive_at(self, u: float) -> np.ndarray:
        keep = (self.birth <= u) & (u < self.death)
        return self.traits[keep]

    def segments_until(self, t: float):
        keep = self.birth < t
        return (self.birth[keep], np.minimum(self.death[keep], t),
                self.traits[keep])


@dataclass
class Trace:
    """Complete record of one run: the ancestry forest plus the event log."""

    config: ModelConfig
    base_seed: int
    replicate: int
    final_time: float
    exploded: bool
    parent: np.ndarray       # (N,) int64, -1 for founders
    birth: np.ndarray        # (N,) float64
    death: np.ndarray        # (N,) float64, inf if alive at final_time
    trait: np.ndarray        # (N, d) float64
    is_mutant: np.ndarray    # (N,) bool
    jump_head: np.ndarray    # (N,) nearest self-or-ancestor trait change
    prev_jump: np.ndarray    # (N,) previous trait change, -1 past the founder
    ev_time: np.ndarray      # (E,) float64
    ev_kind: np.ndarray      # (E,) int8
    ev_subject: np.ndarray   # (E,) int64  parent or decedent
    ev_child: np.ndarray     # (E,) int64  newborn id, -1 for deaths
    initial_count: int

    @property
    def node_count(self) -> int:
        return len(self.parent)

    @property
    def event_count(self) -> int:
        return len(self.ev_time)

    def node(self, i: int) -> AncestryNode:
        return AncestryNode(i, int(self.parent[i]), float(self.birth[i]),
                            float(self.death[i]), self.trait[i],
                            bool(self.is_mutant[i]))

    def history(self) -> PopulationHistory:
        return PopulationHistory(self.birth, self.death, self.trait)

    def alive_ids(self, t: float) -> np.ndarray:
        return np.nonzero((self.birth <= t) & (t < self.death))[0]


@dataclass
class ReplicateResult:
    replicate: int
    value: object
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def rng_for(seed: int, replicate: int) -> np.random.Generator:
    """Counter-based stream keyed by (seed, replicate): replicate streams are
    independent and do not depend on scheduling or thread count."""
    if seed < 0 or replicate < 0:
        raise ValueError("seed and replicate must be nonnegative")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, replicate])))


def _grow(arr: np.ndarray, cap: int) -> np.ndarray:
    out = np.empty((cap,) + arr.shape[1:], dtype=arr.dtype)
    out[:len(arr)] = arr
    return out


def simulate(cfg: ModelConfig, replicate: int = 0, seed: int | None = None) -> Trace:
    """Run one exact trajectory on [0, horizon].

    Raises ExplosionError (with the partial trace attached) if the alive
    count reaches cfg.explosion_cap.
    """
    base_seed = cfg.seed if seed is None else seed
    rng = rng_for(base_seed, replicate)
    rs, n, T, d = cfg.rates, cfg.n, cfg.horizon, cfg.dimension
    mut = cfg.mutation

    m0 = len(cfg.initial_traits)
    cap = max(1024, 2 * m0)
    parent = np.full(cap, -1, dtype=np.int64)
    birth_t = np.zeros(cap)
    death_t = np.full(cap, np.inf)
    trait = np.empty((cap, d))
    is_mut = np.zeros(cap, dtype=bool)
    jump_head = np.empty(cap, dtype=np.int64)
    prev_jump = np.full(cap, -1, dtype=np.int64)

    trait[:m0] = cfg.initial_traits
    jump_head[:m0] = np.arange(m0)
    size = m0

    alive = np.empty(cap, dtype=np.int64)
    alive[:m0] = np.arange(m0)
    alive_traits = np.empty((cap, d))
    alive_traits[:m0] = cfg.initial_traits
    pos = np.full(cap, -1, dtype=np.int64)
    pos[:m0] = np.arange(m0)
    m = m0

    ev_cap = 4096
    ev_time = np.empty(ev_cap)
    ev_kind = np.empty(ev_cap, dtype=np.int8)
    ev_subj = np.empty(ev_cap, dtype=np.int64)
    ev_child = np.empty(ev_cap, dtype=np.int64)
    n_ev = 0

    count_max = m0
    nu_d_mass = rs.nu_d.total_mass(T)

    # evaluation shortcuts; anything not covered falls back to the exact
    # model-level formulas on the reconstructed lineage
    probe = step_path([0.0], np.zeros((1, d)))
    const_r = rs.R.value if isinstance(rs.R, ConstantRate) else None
    if const_r is not None:
        rs.r_of(np.zeros(d))  # bound check once
    const_b = rs.B.value if isinstance(rs.B, ConstantRate) else None
    if const_b is not None:
        rs.b_of(np.zeros(d))
    const_D = rs.D.value if isinstance(rs.D, ConstantPathRate) else None
    if const_D is not None:
        rs.d_of(0.0, probe)
    dirac_r = rs.nu_r.is_dirac_at_zero
    dirac_b = rs.nu_b.is_dirac_at_zero
    dirac_only_d = rs.nu_d.is_dirac_at_zero
    empty_d = rs.nu_d.is_empty
    # functions reading only the lineage's value at the evaluation time may
    # be fed a constant probe path holding the current trait
    u_terminal = getattr(rs.U, "terminal_only", False)

    from .model import memory_integral  # local alias, hot loop

    def build_lineage(i: int) -> StepPath:
        ts, vs = [], []
        j = jump_head[i]
        while j >= 0:
            ts.append(birth_t[j])
            vs.append(trait[j])
            j = prev_jump[j]
        ts.reverse()
        vs.reverse()
        return StepPath(np.array(ts), np.array(vs))

    def make_trace(final_time: float, exploded: bool) -> Trace:
        return Trace(
            config=cfg, base_seed=base_seed, replicate=replicate,
            final_time=final_time, exploded=exploded,
            parent=parent[:size].copy(), birth=birth_t[:size].copy(),
            death=death_t[:size].copy(), trait=trait[:size].copy(),
            is_mutant=is_mut[:size].copy(), jump_head=jump_head[:size].copy(),
            prev_jump=prev_jump[:size].copy(),
            ev_time=ev_time[:n_ev].copy(), ev_kind=ev_kind[:n_ev].copy(),
            ev_subject=ev_subj[:n_ev].copy(), ev_child=ev_child[:n_ev].copy(),
            initial_count=m0)

    live_history = PopulationHistory(birth_t, death_t, trait)  # views grow below

    expo = rng.standard_exponential
    unif = rng.random
    t = 0.0
    while m > 0:
        if m >= cfg.explosion_cap:
            raise ExplosionError(make_trace(t, True))
        beta_bar = n * rs.R_high + rs.B_high
        delta_bar = n * rs.R_high + rs.D_high + rs.U_high * (count_max / n) * nu_d_mass
        total_bar = beta_bar + delta_bar
        t += expo() / (m * total_bar)
        if t >= T:
            break
        idx = int(alive[rng.integers(m)])
        theta = unif() * total_bar

        lineage = None
        if (const_r is None and not dirac_r) or (const_b is None and not dirac_b):
            lineage = build_lineage(idx)
        if const_r is not None:
            r = const_r
        else:
            mem = trait[idx] if dirac_r else memory_integral(rs.nu_r, lineage, t)
            r = rs.r_of(mem)
        nr = n * r

        if const_b is not None:
            b = const_b
        else:
            mem = trait[idx] if dirac_b else memory_integral(rs.nu_b, lineage, t)
            b = rs.b_of(mem)
        bn = nr + b

        if theta < bn:
            # birth; the mutation draw settles clonal vs mutant
            h = mut.sample(rng)
            mutant = bool(h.any())
            if size == cap:
                cap *= 2
                parent = _grow(parent, cap)
                birth_t = _grow(birth_t, cap)
                death_t = _grow(death_t, cap)
                death_t[size:] = np.inf
                trait = _grow(trait, cap)
                is_mut = _grow(is_mut, cap)
                jump_head = _grow(jump_head, cap)
                prev_jump = _grow(prev_jump, cap)
                alive = _grow(alive, cap)
                alive_traits = _grow(alive_traits, cap)
                pos = _grow(pos, cap)
            c = size
            size += 1
            parent[c] = idx
            birth_t[c] = t
            death_t[c] = np.inf
            new_trait = trait[idx] + h
            trait[c] = new_trait
            is_mut[c] = mutant
            if mutant:
                jump_head[c] = c
                prev_jump[c] = jump_head[idx]
            else:
                jump_head[c] = jump_head[idx]
            alive[m] = c
            alive_traits[m] = new_trait
            pos[c] = m
            m += 1
            count_max = max(count_max, m)
            kind = KIND_MUTANT if mutant else KIND_CLONAL
            child = c
        else:
            if const_D is not None:
                D_val = const_D
            else:
                if lineage is None:
                    lineage = build_lineage(idx)
                D_val = rs.d_of(t, lineage)
            inter = 0.0
            if not empty_d:
                if u_terminal:
                    probe.values[0] = trait[idx]
                    y_i = probe
                else:
                    if lineage is None:
                        lineage = build_lineage(idx)
                    y_i = lineage
                if dirac_only_d:
                    inter = float(rs.u_of(t, y_i, alive_traits[:m]).sum()) / n
                else:
                    live_history.birth = birth_t[:size]
                    live_history.death = death_t[:size]
                    live_history.traits = trait[:size]
                    inter = interaction_rate(t, y_i, live_history, cfg)
            dn = nr + D_val + inter
            if dn > delta_bar * (1.0 + 1e-9):
                raise RuntimeError(
                    f"death rate {dn} exceeds its dominating bound {delta_bar}; "
                    "declared rate bounds are inconsistent")
            if theta >= bn + dn:
                continue  # discarded candidate
            # death: swap-remove from the alive set
            death_t[idx] = t
            k = pos[idx]
            last = m - 1
            moved = alive[last]
            alive[k] = moved
            alive_traits[k] = alive_traits[last]
            pos[moved] = k
            pos[idx] = -1
            m -= 1
            kind = KIND_DEATH
            child = -1

        if n_ev == ev_cap:
            ev_cap *= 2
            ev_time = _grow(ev_time, ev_cap)
            ev_kind = _grow(ev_kind, ev_cap)
            ev_subj = _grow(ev_subj, ev_cap)
            ev_child = _grow(ev_child, ev_cap)
        ev_time[n_ev] = t
        ev_kind[n_ev] = kind
        ev_subj[n_ev] = idx
        ev_child[n_ev] = child
        n_ev += 1

    return make_trace(T, False)


def lineage_of(trace: Trace, node_id: int, t: float | None = None) -> StepPath:
    """Ancestral trait path of a node: jumps exactly at the births of its
    mutant ancestors (and at 0 for the founder).  Clonal children share their
    parent's path.  With t given, the path is stopped there."""
    if not 0 <= node_id < trace.node_count:
        raise ValueError(f"node {node_id} not in trace")
    ts, vs = [], []
    j = trace.jump_head[node_id]
    while j >= 0:
        ts.append(trace.birth[j])
        vs.append(trace.trait[j])
        j = trace.prev_jump[j]
    ts.reverse()
    vs.reverse()
    y = StepPath(np.array(ts), np.array(vs))
    if t is not None:
        from .paths import stop
        y = stop(y, t)
    return y


def mass_series(trace: Trace, grid) -> np.ndarray:
    """Mass (alive count / n) at each grid time.  Times past the final time
    of an exploded trace are NaN."""
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    if np.any(grid < 0):
        raise ValueError("grid times must be nonnegative")
    steps = np.zeros(trace.event_count, dtype=np.int64)
    steps[trace.ev_kind != KIND_DEATH] = 1
    steps[trace.ev_kind == KIND_DEATH] = -1
    counts = trace.initial_count + np.concatenate([[0], np.cumsum(steps)])
    idx = np.searchsorted(trace.ev_time, grid, side="right")
    out = counts[idx] / trace.config.n
    if trace.exploded:
        out = np.where(grid > trace.final_time, np.nan, out)
    return out


def state_at(trace: Trace, t: float) -> PopulationState:
    if not 0 <= t <= trace.final_time:
        raise ValueError(f"time {t} outside [0, {trace.final_time}]")
    ids = trace.alive_ids(t)
    return PopulationState(time=t, ids=ids, traits=trace.trait[ids],
                           count=len(ids), mass=len(ids) / trace.config.n)


def replay(trace: Trace) -> Iterator[PopulationState]:
    """States at time 0 and after each event, in order."""
    n = trace.config.n
    alive: list[int] = list(range(trace.initial_count))
    posn = {i: i for i in alive}

    def snap(t: float) -> PopulationState:
        ids = np.array(alive, dtype=np.int64)
        return PopulationState(time=t, ids=ids, traits=trace.trait[ids],
                               count=len(ids), mass=len(ids) / n)

    yield snap(0.0)
    for k in range(trace.event_count):
        if trace.ev_kind[k] == KIND_DEATH:
            i = int(trace.ev_subject[k])
            j = posn.pop(i)
            last = alive.pop()
            if last != i:
                alive[j] = last
                posn[last] = j
        else:
            c = int(trace.ev_child[k])
            posn[c] = len(alive)
            alive.append(c)
        yield snap(float(trace.ev_time[k]))


def _run_one(args) -> ReplicateResult:
    cfg, rep, seed, reduce_fn = args
    try:
        tr = simulate(cfg, replicate=rep, seed=seed)
        return ReplicateResult(rep, reduce_fn(tr) if reduce_fn else tr)
    except ExplosionError as e:
        return ReplicateResult(rep, None, error=str(e))
    except Exception as e:  # report, do not abort the batch
        return ReplicateResult(rep, None, error=f"{type(e).__name__}: {e}")


def resolve_threads(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get("LINEAGESIM_THREADS", "1"))
    if threads < 1:
        raise ValueError("threads must be >= 1")
    return threads


def run_replicates(cfg: ModelConfig, replicates, threads: int | None = None,
                   reduce: Callable | None = None,
                   seed: int | None = None) -> list[ReplicateResult]:
    """Run many replicates; results come back ordered by replicate index.

    `replicates` is a count or an explicit list of indices.  Each replicate
    draws from its own (seed, index) stream, so results are identical for any
    thread count.  With `reduce`, workers return reduce(trace) instead of the
    trace (must be picklable when threads > 1).  Failures, including
    explosions, are reported per replicate without aborting the batch.
    """
    reps = list(range(replicates)) if isinstance(replicates, int) else list(replicates)
    threads = resolve_threads(threads)
    jobs = [(cfg, r, seed, reduce) for r in reps]
    if threads == 1 or len(reps) <= 1:
        return [_run_one(j) for j in jobs]
    ctx = get_context("fork")
    chunk = max(1, len(jobs) // (4 * threads))
    with ctx.Pool(threads) as pool:
        return pool.map(_run_one, jobs, chunksize=chunk)
