"""Event-driven simulation: thinning law, ancestry bookkeeping, determinism."""
import math

import numpy as np
import pytest
from scipy import stats

from lineagesim import StepPath, eval_at, stop
from lineagesim.model import (
    ConstantCompetition, ConstantPathRate, ConstantRate, MemoryKernel,
    ModelConfig, MutationKernel, RateSpec, scenario,
)
from lineagesim.engine import (
    ExplosionError, KIND_CLONAL, KIND_DEATH, KIND_MUTANT, lineage_of,
    mass_series, replay, rng_for, run_replicates, simulate, state_at,
)


def _plain_config(b=0.3, d_nat=0.2, d_high=None, R_bar=1.0, n=5, m0=1,
                  T=3.0, p=0.0, seed=0):
    rates = RateSpec(
        R=ConstantRate(R_bar), B=ConstantRate(b), D=ConstantPathRate(d_nat),
        U=ConstantCompetition(1.0), R_low=R_bar, R_high=R_bar, B_high=b,
        D_high=d_nat if d_high is None else d_high, U_high=1.0,
        nu_d=MemoryKernel())
    return ModelConfig(dimension=1, n=n, horizon=T, rates=rates,
                       mutation=MutationKernel(p, 1.0, n, 1),
                       initial_traits=np.zeros((m0, 1)), seed=seed)


def _first_events(cfg, reps):
    times, kinds = [], []
    for r in range(reps):
        tr = simulate(cfg, replicate=r)
        assert tr.event_count > 0
        times.append(tr.ev_time[0])
        kinds.append(tr.ev_kind[0])
    return np.array(times), np.array(kinds)


def test_first_event_law():
    # one founder: the first event time is exponential with the total rate
    # n*r + b + n*r + d, and it is a birth with probability (n*r+b)/total
    cfg = _plain_config(b=0.3, d_nat=0.2, n=5, m0=1)
    total = (5 + 0.3) + (5 + 0.2)
    times, kinds = _first_events(cfg, 600)
    ks = stats.kstest(times, "expon", args=(0, 1.0 / total))
    assert ks.pvalue > 0.005
    births = int(np.sum(kinds != KIND_DEATH))
    ci = stats.binomtest(births, 600, (5 + 0.3) / total).pvalue
    assert ci > 0.005


def test_first_event_law_with_rejections():
    # widening the declared bounds adds rejected candidates; the law of the
    # accepted events must not change
    cfg = _plain_config(b=0.3, d_nat=0.2, d_high=2.0, n=5, m0=1)
    total = (5 + 0.3) + (5 + 0.2)
    times, kinds = _first_events(cfg, 600)
    ks = stats.kstest(times, "expon", args=(0, 1.0 / total))
    assert ks.pvalue > 0.005
    births = int(np.sum(kinds != KIND_DEATH))
    assert stats.binomtest(births, 600, (5 + 0.3) / total).pvalue > 0.005


def test_mean_mass_matches_growth_rate():
    # without competition the mean mass is exactly exp(gamma * t)
    for gamma, seedbase in ((0.0, 0), (-0.8, 1)):
        cfg = scenario("neutral", gamma_bar=gamma, n=25, horizon=0.6)
        vals = np.array([mass_series(simulate(cfg, replicate=r), [0.6])[0]
                         for r in range(300)])
        want = math.exp(gamma * 0.6)
        se = vals.std() / math.sqrt(len(vals))
        assert abs(vals.mean() - want) < 4 * se + 1e-9


def test_mutation_split_and_scale():
    cfg = scenario("dieckmann-doebeli", n=60, horizon=0.3)
    tr = simulate(cfg)
    births = tr.ev_kind != KIND_DEATH
    mutants = tr.ev_kind == KIND_MUTANT
    nb, nm = int(births.sum()), int(mutants.sum())
    assert stats.binomtest(nm, nb, 0.5).pvalue > 0.005
    children = tr.ev_child[mutants]
    disp = tr.trait[children, 0] - tr.trait[tr.parent[children], 0]
    assert np.all(disp != 0)
    assert disp.std() == pytest.approx(0.4 / math.sqrt(60), rel=0.15)
    clonal_children = tr.ev_child[tr.ev_kind == KIND_CLONAL]
    assert np.all(tr.trait[clonal_children, 0]
                  == tr.trait[tr.parent[clonal_children], 0])


def test_clonal_children_share_lineage_exactly():
    cfg = scenario("dieckmann-doebeli", n=40, horizon=0.3)
    tr = simulate(cfg)
    clonal = np.nonzero(tr.ev_kind == KIND_CLONAL)[0]
    for k in clonal[:: max(1, len(clonal) // 25)]:
        child = int(tr.ev_child[k])
        par = int(tr.ev_subject[k])
        assert lineage_of(tr, child) == lineage_of(tr, par)


def test_mutant_lineage_jumps_at_birth():
    cfg = scenario("dieckmann-doebeli", n=40, horizon=0.3)
    tr = simulate(cfg)
    mut = np.nonzero(tr.ev_kind == KIND_MUTANT)[0]
    assert len(mut) > 5
    for k in mut[:: max(1, len(mut) // 25)]:
        child = int(tr.ev_child[k])
        par = int(tr.ev_subject[k])
        tb = float(tr.ev_time[k])
        y_c = lineage_of(tr, child)
        assert y_c.jump_times[-1] == tb
        assert np.array_equal(y_c.values[-1], tr.trait[child])
        # strictly before the birth the two lineages coincide
        before = tb * (1 - 1e-12)
        assert stop(y_c, before) == stop(lineage_of(tr, par), before)


def test_lineage_jumps_only_at_mutant_births_or_zero():
    cfg = scenario("dieckmann-doebeli", n=40, horizon=0.25)
    tr = simulate(cfg)
    mutant_times = set(tr.ev_time[tr.ev_kind == KIND_MUTANT].tolist())
    for i in tr.alive_ids(tr.final_time)[:30]:
        y = lineage_of(tr, int(i))
        assert y.jump_times[0] == 0.0
        for s in y.jump_times[1:]:
            assert s in mutant_times


def test_lineage_of_stopped():
    cfg = scenario("dieckmann-doebeli", n=40, horizon=0.25)
    tr = simulate(cfg)
    i = int(tr.alive_ids(0.25)[0])
    full = lineage_of(tr, i)
    part = lineage_of(tr, i, t=0.1)
    assert part == stop(full, 0.1)
    with pytest.raises(ValueError):
        lineage_of(tr, tr.node_count + 3)


def test_mass_series_steps():
    cfg = scenario("neutral", gamma_bar=0.0, n=10, horizon=1.0)
    tr = simulate(cfg)
    assert tr.event_count > 10
    masses = mass_series(tr, tr.ev_time)
    jumps = np.diff(np.concatenate([[1.0], masses]))
    assert np.allclose(np.abs(jumps), 1.0 / 10)
    signs = np.where(tr.ev_kind == KIND_DEATH, -1.0, 1.0)
    assert np.allclose(jumps, signs / 10)


def test_state_at_and_replay_agree():
    cfg = scenario("dieckmann-doebeli", n=25, horizon=0.3)
    tr = simulate(cfg)
    states = list(replay(tr))
    assert len(states) == tr.event_count + 1
    for k in (0, len(states) // 2, len(states) - 1):
        st = states[k]
        direct = state_at(tr, st.time)
        assert set(st.ids.tolist()) == set(direct.ids.tolist())
        assert st.count == direct.count
        assert st.mass == direct.mass
    # a decedent leaves the population at its death time
    deaths = np.nonzero(tr.ev_kind == KIND_DEATH)[0]
    k = int(deaths[0])
    assert int(tr.ev_subject[k]) not in state_at(tr, float(tr.ev_time[k])).ids


def test_alive_count_balances_events():
    cfg = scenario("logistic", n=30, horizon=1.5)
    tr = simulate(cfg)
    births = int(np.sum(tr.ev_kind != KIND_DEATH))
    deaths = int(np.sum(tr.ev_kind == KIND_DEATH))
    assert len(tr.alive_ids(tr.final_time)) == tr.initial_count + births - deaths
    assert tr.node_count == tr.initial_count + births


def test_determinism_and_stream_independence():
    cfg = scenario("dieckmann-doebeli", n=30, horizon=0.2)
    a = simulate(cfg, replicate=3)
    b = simulate(cfg, replicate=3)
    assert np.array_equal(a.ev_time, b.ev_time)
    assert np.array_equal(a.ev_kind, b.ev_kind)
    assert np.array_equal(a.trait, b.trait)
    c = simulate(cfg, replicate=4)
    assert not np.array_equal(a.ev_time, c.ev_time)
    d = simulate(cfg, replicate=3, seed=99)
    assert not np.array_equal(a.ev_time, d.ev_time)
    assert rng_for(1, 2).random() == rng_for(1, 2).random()
    with pytest.raises(ValueError):
        rng_for(-1, 0)


def test_explosion_raises_with_partial_trace():
    cfg = _plain_config(b=3.0, d_nat=0.0, R_bar=0.01, n=1, m0=1, T=100.0)
    # fast pure growth, so the cap is hit long before the horizon
    cfg = ModelConfig(**{**cfg.__dict__, "explosion_cap": 16})
    with pytest.raises(ExplosionError) as exc:
        simulate(cfg)
    tr = exc.value.trace
    assert tr.exploded
    assert len(tr.alive_ids(tr.final_time)) == 16
    assert tr.final_time < 100.0
    assert np.isnan(mass_series(tr, [tr.final_time + 1.0])[0])


def test_run_replicates_reports_failures_without_aborting():
    cfg = _plain_config(b=3.0, d_nat=0.0, R_bar=0.01, n=1, m0=1, T=100.0)
    cfg = ModelConfig(**{**cfg.__dict__, "explosion_cap": 16})
    results = run_replicates(cfg, 4)
    assert [r.replicate for r in results] == [0, 1, 2, 3]
    assert all(not r.ok and "explosion" in r.error for r in results)


def test_run_replicates_parallel_matches_serial():
    cfg = scenario("neutral", gamma_bar=0.0, n=15, horizon=0.4)
    serial = run_replicates(cfg, 6, threads=1)
    parallel = run_replicates(cfg, 6, threads=3)
    for a, b in zip(serial, parallel):
        assert a.replicate == b.replicate
        assert np.array_equal(a.value.ev_time, b.value.ev_time)
        assert np.array_equal(a.value.trait, b.value.trait)


def test_run_replicates_reduce_and_env_threads(monkeypatch):
    cfg = scenario("neutral", gamma_bar=0.0, n=15, horizon=0.4)
    out = run_replicates(cfg, [2, 0], reduce=lambda tr: tr.event_count)
    assert [r.replicate for r in out] == [2, 0]
    assert all(isinstance(r.value, int) for r in out)
    assert out[0].value == simulate(cfg, replicate=2).event_count
    monkeypatch.setenv("LINEAGESIM_THREADS", "2")
    out2 = run_replicates(cfg, 4)
    assert [r.replicate for r in out2] == [0, 1, 2, 3]
    monkeypatch.setenv("LINEAGESIM_THREADS", "0")
    with pytest.raises(ValueError):
        run_replicates(cfg, 2)


def test_empty_initial_population():
    cfg = _plain_config(m0=1, T=1.0)
    cfg = ModelConfig(**{**cfg.__dict__, "initial_traits": np.zeros((0, 1))})
    tr = simulate(cfg)
    assert tr.event_count == 0
    assert tr.final_time == 1.0
    assert mass_series(tr, [0.0, 0.5, 1.0]).tolist() == [0.0, 0.0, 0.0]


def test_exponential_memory_scenario_runs():
    cfg = scenario("adler-goats", horizon=0.4)
    tr = simulate(cfg)
    assert tr.event_count > 50
    assert not tr.exploded
    # past occupancy keeps suppressing: deaths occur even where nobody stands
    assert int(np.sum(tr.ev_kind == KIND_DEATH)) > 0


def test_state_at_bounds():
    cfg = scenario("neutral", n=10, horizon=0.5)
    tr = simulate(cfg)
    with pytest.raises(ValueError):
        state_at(tr, -0.1)
    with pytest.raises(ValueError):
        state_at(tr, 0.6)
    with pytest.raises(ValueError):
        mass_series(tr, [-0.2])
