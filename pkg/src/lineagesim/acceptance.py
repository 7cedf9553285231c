"""Acceptance suite: cross-oracle and property checks with pinned tolerances.

Each criterion is deterministic (fixed seeds), prints one pass/fail line, and
carries its measured detail so a failure states what was observed, not just
that it happened. quick=True shrinks Monte Carlo sizes for a fast sanity run;
the stated tolerances stay the same.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .engine import lineage_of, mass_series, run_replicates, simulate
from .fk import feller_mass_sample, fk1_estimator, fk2_estimator, particle_intensity_estimator
from .model import (
    DIRAC_AT_ZERO, ConstantCompetition, ConstantPathRate, ConstantRate,
    MemoryKernel, ModelConfig, MutationKernel, RateSpec, TanhShiftRate,
    scenario,
)
from .observables import (
    EmptyPopulationError, ProductTestFunction, eval_D2Gg, eval_Gg,
    eval_product, family_count, gaussian_bump_g, make_test_function,
    martingale_residual, mollify, sample_lineage, tilde_delta,
)
from .paths import (
    PremiseNotSatisfied, check_concat_stability, concat, skorokhod_distance,
    step_path,
)
from .reference import skorokhod_bruteforce
from .tracefiles import write_events

# Horizon of the subgroup-separation demo trace. Short on purpose: with the
# published parameters the equilibrium mass is about exp(-25/32) and the
# demographic noise sqrt(2N) dwarfs it, so most runs die out within a couple
# of time units (the model is known for short persistence). At 0.5 about
# three quarters of runs still carry >= 2 ancestral families at tau = t/2.
DD_DEMO_HORIZON = 0.5


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"{mark}  {self.number:2d}. {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _terminal_mass(tr):
    return float(mass_series(tr, [tr.config.horizon])[0])


def criterion_1(quick: bool) -> tuple[bool, str]:
    """Critical neutral model conserves mean mass."""
    reps = 200 if quick else 1000
    cfg = scenario("neutral", gamma_bar=0.0, n=50, horizon=1.0, seed=11)
    vals = np.array([r.value for r in
                     run_replicates(cfg, reps, reduce=_terminal_mass)])
    se = vals.std() / math.sqrt(len(vals))
    ok = abs(vals.mean() - 1.0) < 3 * se
    return ok, f"mean mass {vals.mean():.4f} vs 1.0, 3*SE={3 * se:.4f}, reps={reps}"


def _mass_at_halves(tr):
    return mass_series(tr, [0.5, 1.0])


def criterion_2(quick: bool) -> tuple[bool, str]:
    """Supercritical mean mass follows exp(gamma*t)."""
    reps = 200 if quick else 1000
    cfg = scenario("neutral", gamma_bar=0.5, n=50, horizon=1.0, seed=22)
    vals = np.stack([r.value for r in
                     run_replicates(cfg, reps, reduce=_mass_at_halves)])
    parts = []
    ok = True
    for j, t in enumerate((0.5, 1.0)):
        target = math.exp(0.5 * t)
        se = vals[:, j].std() / math.sqrt(len(vals))
        ok &= abs(vals[:, j].mean() - target) < 3 * se
        parts.append(f"t={t}: {vals[:, j].mean():.4f} vs {target:.4f} (3SE {3 * se:.4f})")
    return ok, "; ".join(parts) + f", reps={reps}"


# Window for the centering check. The compensated-functional property is
# horizon-free, so the check runs on a half-unit window to keep 2000 full
# replicates inside the runtime budget; nine quadrature nodes reproduce the
# 21-node values to machine precision on these smooth integrands.
_MART_HORIZON = 0.5
_MART_GRID = (0.1, 0.2, 0.3, 0.4, 0.5)


def _mart_reduce(tr):
    T = tr.config.horizon
    out = []
    for G, center, width in (("exp-neg", 0.0, 1.0), ("identity", 0.5, 0.8)):
        g, grad, lap = gaussian_bump_g(center, width)
        f = make_test_function(g, grad, lap, horizon=T, G=G, validate=False)
        ms = martingale_residual(tr, f, max_step=T / 500, quad_nodes=9)
        idx = np.searchsorted(ms.times, _MART_GRID, side="right") - 1
        out.append((ms.residual[idx], ms.terminal, ms.terminal_bracket))
    return out


def criterion_3(quick: bool) -> tuple[bool, str]:
    """Compensated population functionals are centered with matching bracket."""
    reps = 300 if quick else 2000
    # alpha=1, eta=0.5, R_bar=1, n=50
    cfg = scenario("logistic", horizon=_MART_HORIZON, seed=33)
    results = run_replicates(cfg, reps, reduce=_mart_reduce)
    ok = True
    parts = []
    for k, tag in ((0, "exp-neg"), (1, "identity")):
        grid = np.stack([r.value[k][0] for r in results])
        mt = np.array([r.value[k][1] for r in results])
        bk = np.array([r.value[k][2] for r in results])
        se = grid.std(axis=0) / math.sqrt(reps)
        zmax = float(np.max(np.abs(grid.mean(axis=0)) / np.where(se > 0, se, 1.0)))
        ratio = mt.var() / bk.mean()
        ok &= zmax < 3.0 and abs(ratio - 1.0) < 0.10
        parts.append(f"{tag}: max|z|={zmax:.2f}, var/bracket={ratio:.3f}")
    return ok, "; ".join(parts) + f", reps={reps}"


def _tanh_growth_config(n: int) -> ModelConfig:
    rates = RateSpec(R=ConstantRate(1.0), B=TanhShiftRate(0.5, 0.5),
                     D=ConstantPathRate(0.5), U=ConstantCompetition(1e-9),
                     R_low=1.0, R_high=1.0, B_high=1.0, D_high=0.5,
                     U_high=1e-8, nu_r=DIRAC_AT_ZERO, nu_b=DIRAC_AT_ZERO,
                     nu_d=MemoryKernel())
    return ModelConfig(dimension=1, n=n, horizon=1.0, rates=rates,
                       mutation=MutationKernel(1.0, 1.0, n, 1),
                       initial_traits=np.zeros((n, 1)), seed=44,
                       label="tanh-growth")


def criterion_4(quick: bool) -> tuple[bool, str]:
    """Non-interacting intensity matches the importance-weighted Brownian oracle."""
    reps = 200 if quick else 1500
    paths = 20_000 if quick else 100_000
    cfg = _tanh_growth_config(100)
    traces = [r.value for r in run_replicates(cfg, reps) if r.ok]
    pe = particle_intensity_estimator(traces,
                                      lambda y: float(y.at(1.0)[0]), 1.0)
    fe = fk1_estimator(lambda s, x: 0.5 * np.tanh(x[:, 0]),
                       lambda w: float(w.terminal[0]), 1.0, paths, 1e-3,
                       np.random.default_rng(404))
    gap = abs(pe.value - fe.value)
    band = 3 * math.hypot(pe.se, fe.se)
    shift = abs(fe.value - fe.halved_value)
    ok = gap < band and shift < fe.se
    return ok, (f"particle {pe.value:.4f}+-{pe.se:.4f} vs fk1 "
                f"{fe.value:.4f}+-{fe.se:.4f}, gap {gap:.4f} < {band:.4f}; "
                f"halving shift {shift:.2e} < SE {fe.se:.2e}")


def criterion_5(quick: bool) -> tuple[bool, str]:
    """Logistic intensity matches the mass-reweighted Brownian oracle."""
    reps = 150 if quick else 1000
    paths = 10_000 if quick else 50_000
    cfg = scenario("logistic", n=200, seed=55)
    traces = [r.value for r in run_replicates(cfg, reps) if r.ok]
    pe = particle_intensity_estimator(traces,
                                      lambda y: float(y.at(1.0)[0]), 1.0)
    fe = fk2_estimator(lambda w: float(w.terminal[0]), 1.0, 1.0, 0.5, 1.0,
                       paths, 1e-3, np.random.default_rng(505),
                       initial_mass=1.0)
    gap = abs(pe.value - fe.value)
    band = 3 * math.hypot(pe.se, fe.se)
    ok = gap < band
    return ok, (f"particle {pe.value:.4f}+-{pe.se:.4f} vs fk2 "
                f"{fe.value:.4f}+-{fe.se:.4f}, gap {gap:.4f} < {band:.4f}")


def criterion_6(quick: bool) -> tuple[bool, str]:
    """Sampled ancestral traits at t/2 are Gaussian with variance p*R*sigma^2*s.

    One lineage per replicate: draws from the same population share ancestry,
    and the KS p-value is only valid for independent samples.
    """
    want = 400 if quick else 2000
    cfg = scenario("neutral", gamma_bar=0.0, n=100, horizon=1.0, seed=66)
    s = 0.5
    draws = []
    rep = 0
    rng = np.random.default_rng(660)
    while len(draws) < want and rep < 4 * want:
        tr = simulate(cfg, replicate=rep)
        rep += 1
        try:
            y = sample_lineage(tr, 1.0, rng)
        except EmptyPopulationError:
            continue
        draws.append(float(y.at(s)[0]))
    arr = np.array(draws)
    res = stats.kstest(arr, "norm", args=(0.0, math.sqrt(s)))
    ok = res.pvalue > 0.01
    return ok, (f"KS p={res.pvalue:.3f} (stat {res.statistic:.4f}) over "
                f"{len(arr)} lineages from {rep} replicates")


def criterion_7(quick: bool) -> tuple[bool, str]:
    """Rescaled terminal mass approaches the square-root diffusion law."""
    reps = 800 if quick else 2000
    euler = 20_000 if quick else 100_000
    ref = feller_mass_sample(1.0, 0.0, 1.0, 1.0, 1e-3,
                             np.random.default_rng(707), size=euler)
    ks = {}
    for n in (50, 200):
        cfg = scenario("neutral", gamma_bar=0.0, n=n, horizon=1.0, seed=77)
        masses = np.array([r.value for r in
                           run_replicates(cfg, reps, reduce=_terminal_mass)])
        ks[n] = stats.ks_2samp(masses, ref).statistic
    ok = ks[200] < 0.05 and ks[200] < ks[50]
    return ok, (f"KS(n=200)={ks[200]:.4f} < 0.05 and < KS(n=50)={ks[50]:.4f}, "
                f"reps={reps}, euler={euler}")


def _random_step_path(rng, T, max_jumps=3, lo=-3.0, hi=3.0, d=1):
    k = int(rng.integers(0, max_jumps + 1))
    times = np.concatenate([[0.0], np.sort(rng.uniform(0.05 * T, 0.95 * T, k))])
    vals = rng.uniform(lo, hi, (k + 1, d))
    return step_path(times, vals)


def stability_campaign(trials: int, rng: np.random.Generator,
                       T: float = 2.0) -> dict:
    """Randomized premise-satisfying concatenation triples.

    The premise bound is taken tight (slightly above the measured distance
    and time-shift), and amplitudes for the appended path range up to well
    above the base paths, so the campaign explores the regime where time
    misalignment of a large shared jump competes with the 3*eps budget.
    """
    held = 0
    premise_used = 0
    violations = []
    while premise_used < trials:
        y = _random_step_path(rng, T)
        if rng.random() < 0.5:
            z = y
        else:
            z = step_path(y.jump_times, y.values + rng.normal(0.0, 0.05,
                                                              y.values.shape))
        amp = 30.0 if rng.random() < 0.3 else 3.0
        w = _random_step_path(rng, T, max_jumps=2, lo=-amp, hi=amp)
        s = float(rng.uniform(0.3, 0.8) * T)
        r = min(float(s * math.exp(rng.uniform(0.0, 0.08))), 0.98 * T)
        slope = max(math.log(r / s), math.log((T - s) / (T - r)))
        eps = max(skorokhod_distance(y, z, T), slope) * (
            1.0 + float(rng.uniform(0.01, 0.5))) + 1e-9
        try:
            ok = check_concat_stability(y, z, w, s, r, eps, T)
        except PremiseNotSatisfied:
            continue
        premise_used += 1
        if ok:
            held += 1
        elif len(violations) < 5:
            d = skorokhod_distance(concat(y, s, w), concat(z, r, w), T)
            violations.append({
                "eps": eps, "distance": d, "s": s, "r": r, "T": T,
                "y_times": y.jump_times.tolist(),
                "y_values": y.values[:, 0].tolist(),
                "w_values": w.values[:, 0].tolist(),
            })
    return {"trials": premise_used, "held": held, "violations": violations}


def dp_oracle_check(instances: int, rng: np.random.Generator) -> tuple[bool, float]:
    worst = 0.0
    for _ in range(instances):
        T = float(rng.uniform(0.5, 2.0))
        y = _random_step_path(rng, T, max_jumps=3)
        z = _random_step_path(rng, T, max_jumps=3)
        gap = abs(skorokhod_distance(y, z, T) - skorokhod_bruteforce(y, z, T, fill=2))
        worst = max(worst, gap)
    return worst < 1e-6, worst


def criterion_8(quick: bool) -> tuple[bool, str]:
    """Concatenation stability holds on every premise-satisfying triple."""
    trials = 1000 if quick else 10_000
    report = stability_campaign(trials, np.random.default_rng(808))
    dp_ok, worst = dp_oracle_check(100, np.random.default_rng(809))
    frac = report["held"] / report["trials"]
    ok = report["held"] == report["trials"] and dp_ok
    detail = (f"conclusion held {report['held']}/{report['trials']} "
              f"({100 * frac:.2f}%); oracle gap {worst:.2e}")
    if report["violations"]:
        v = report["violations"][0]
        detail += (f"; first violation d={v['distance']:.4f} vs "
                   f"3eps={3 * v['eps']:.4f} (s={v['s']:.3f}, r={v['r']:.3f})")
    return ok, detail


def _mollifier_case(rng):
    T = 2.0
    # keep factor times, evaluation time, and path jumps mutually separated
    # so the kernel tails at q=100 already distinguish past from future
    t1 = float(rng.uniform(0.45, 0.75))
    t2 = float(rng.uniform(t1 + 0.6, 1.7))
    jump = float(rng.uniform(0.1, 0.35))
    y = step_path([0.0, jump], rng.uniform(-1.5, 1.5, (2, 1)))
    phi = ProductTestFunction(
        (t1, t2),
        (gaussian_bump_g(float(rng.uniform(-1, 1)), float(rng.uniform(0.7, 1.4))),
         gaussian_bump_g(float(rng.uniform(-1, 1)), float(rng.uniform(0.7, 1.4)))))
    t_eval = 0.5 * (t1 + t2)
    return T, y, phi, t_eval


def criterion_9(quick: bool) -> tuple[bool, str]:
    """Mollified products converge to sampled products, and their second-order
    operator to the product Laplacian."""
    cases = 20 if quick else 100
    rng = np.random.default_rng(909)
    qs = (1e2, 1e3, 1e4)
    worst_v = worst_d = 0.0
    mono_fail = 0
    for _ in range(cases):
        T, y, phi, t_eval = _mollifier_case(rng)
        ev = []
        ed = []
        target_v = eval_product(phi, y)
        target_d = tilde_delta(phi, t_eval, y)
        for q in qs:
            f = mollify(phi, q, horizon=T)
            ev.append(abs(eval_Gg(f, y) - target_v))
            ed.append(abs(eval_D2Gg(f, y, t_eval) - target_d))
        if not (ev[0] >= ev[1] >= ev[2] and ed[0] >= ed[1] >= ed[2]):
            mono_fail += 1
        worst_v = max(worst_v, ev[2])
        worst_d = max(worst_d, ed[2])
    ok = mono_fail == 0 and worst_v < 1e-2 and worst_d < 1e-2
    return ok, (f"monotone in {cases - mono_fail}/{cases} cases; at q=1e4 "
                f"max|value err|={worst_v:.2e}, max|operator err|={worst_d:.2e}")


def criterion_10(quick: bool) -> tuple[bool, str]:
    """Disruptive competition splits the population into lasting families."""
    reps = 8 if quick else 20
    T = DD_DEMO_HORIZON
    n = 150 if quick else 300
    medians = {}
    frac2 = None
    for su in (0.3, 0.45):
        cfg = scenario("dieckmann-doebeli", sigma_U=su, n=n, horizon=T,
                       seed=1010)
        fams = np.array([family_count(r.value, T, 0.5 * T)
                         for r in run_replicates(cfg, reps) if r.ok])
        medians[su] = float(np.median(fams))
        if su == 0.3:
            frac2 = float(np.mean(fams >= 2))
    ok = frac2 >= 0.6 and medians[0.45] <= medians[0.3]
    return ok, (f"families>=2 in {100 * frac2:.0f}% at sigma_U=0.3 "
                f"(median {medians[0.3]}); median {medians[0.45]} at 0.45; "
                f"T={T}, n={n}, reps={reps}")


def criterion_11(quick: bool) -> tuple[bool, str]:
    """Fixed seeds give byte-identical event logs, independent of threads."""
    import tempfile
    from pathlib import Path

    cfg = scenario("dieckmann-doebeli", n=40, horizon=0.5, seed=1111)
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        blobs = []
        for run in range(2):
            tr = simulate(cfg, replicate=2)
            write_events(tr, tmp / f"run{run}.csv")
            blobs.append((tmp / f"run{run}.csv").read_bytes())
        same_runs = blobs[0] == blobs[1]
        thread_blobs = []
        for threads in (1, 8):
            results = run_replicates(cfg, 3, threads=threads)
            write_events(results[2].value, tmp / f"t{threads}.csv")
            thread_blobs.append((tmp / f"t{threads}.csv").read_bytes())
        same_threads = thread_blobs[0] == thread_blobs[1] == blobs[0]
    ok = same_runs and same_threads
    return ok, (f"rerun identical: {same_runs}; threads 1 vs 8 identical: "
                f"{same_threads} ({len(blobs[0])} bytes)")


CRITERIA = (
    (1, "critical mass conservation", criterion_1),
    (2, "exponential growth oracle", criterion_2),
    (3, "martingale residual suite", criterion_3),
    (4, "non-interacting Feynman-Kac cross-check", criterion_4),
    (5, "logistic Feynman-Kac cross-check", criterion_5),
    (6, "Brownian lineage marginals", criterion_6),
    (7, "mass-law convergence to the square-root diffusion", criterion_7),
    (8, "concatenation stability campaign", criterion_8),
    (9, "mollifier convergence", criterion_9),
    (10, "disruptive-competition family split", criterion_10),
    (11, "byte-identical determinism", criterion_11),
)


# Wall-clock budgets (seconds) that are part of the criterion at full size.
BUDGETS = {1: 120.0, 3: 600.0, 10: 900.0}


def apply_budget(number: int, passed: bool, detail: str, seconds: float,
                 quick: bool) -> tuple[bool, str]:
    budget = BUDGETS.get(number)
    if budget is None or quick:
        return passed, detail
    if seconds > budget:
        return False, detail + f"; over the {budget:.0f}s budget ({seconds:.0f}s)"
    return passed, detail + f"; within {budget:.0f}s budget"


def run_acceptance(quick: bool = False, numbers=None) -> list[CriterionResult]:
    out = []
    for number, name, fn in CRITERIA:
        if numbers and number not in numbers:
            continue
        t0 = time.time()
        try:
            passed, detail = fn(quick)
        except Exception as exc:  # a crashed criterion is a failed criterion
            passed, detail = False, f"raised {type(exc).__name__}: {exc}"
        seconds = time.time() - t0
        passed, detail = apply_budget(number, passed, detail, seconds, quick)
        out.append(CriterionResult(number, name, passed, detail, seconds))
    return out
