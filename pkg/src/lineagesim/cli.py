"""Command-line entry points.

Exit codes: 0 success, 1 invalid configuration or usage (with a field-level
message), 2 runtime failure, 3 acceptance-suite failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, config_hash, load_config, serialize_config
from .engine import ExplosionError, resolve_threads, rng_for, run_replicates, simulate
from .model import SCENARIOS, scenario
from .observables import make_test_function, gaussian_bump_g, martingale_residual, family_count
from . import tracefiles as tf


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # invalid usage is an exit-1 config error
        raise UsageError(message)


def _load(args) -> "ModelConfig":
    if getattr(args, "config", None) and getattr(args, "scenario", None):
        raise ConfigError("", "give either --config or --scenario, not both")
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    elif getattr(args, "scenario", None):
        overrides = {}
        if getattr(args, "horizon", None) is not None:
            overrides["horizon"] = args.horizon
        if getattr(args, "n", None) is not None:
            overrides["n"] = args.n
        cfg = scenario(args.scenario, **overrides)
    else:
        raise ConfigError("", "need --config or --scenario")
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(args, cfg, out: Path, **params) -> None:
    text = serialize_config(cfg)
    (out / "config.toml").write_text(text)
    tf.write_json({
        "version": __version__,
        "subcommand": args.cmd,
        "config_path": str(getattr(args, "config", None) or ""),
        "scenario": getattr(args, "scenario", None) or cfg.label,
        "config_sha256": config_hash(text),
        "out": str(out),
        "parameters": params,
    }, out / "manifest.json")


def _cmd_simulate(args) -> int:
    cfg = _load(args)
    out = _outdir(args)
    trace = simulate(cfg, replicate=args.replicate)
    ext = "csv" if args.format == "csv" else "jsonl"
    tf.write_events(trace, out / f"events.{ext}", fmt=args.format)
    tf.write_mass(trace, out / f"mass.{ext}", fmt=args.format)
    tf.write_forest(trace, out / "forest.jsonl")
    tf.write_genealogy(trace, out / "genealogy.nwk")
    tf.write_json(tf.run_summary(trace), out / "summary.json")
    _manifest(args, cfg, out, replicate=args.replicate, seeds=[cfg.seed],
              format=args.format)
    print(f"wrote trace ({trace.event_count} events) to {out}")
    return 0


def _cmd_replicates(args) -> int:
    cfg = _load(args)
    out = _outdir(args)
    step = args.grid if args.grid else cfg.horizon / 100.0
    grid = np.arange(0.0, cfg.horizon + 0.5 * step, step)
    grid[-1] = min(grid[-1], cfg.horizon)
    results = run_replicates(cfg, args.replicates, threads=args.threads)
    if not any(r.ok for r in results):
        print("all replicates failed:", results[0].error, file=sys.stderr)
        return 2
    summary = tf.batch_summary(results, grid)
    tf.write_json(summary, out / "summary.json")
    _manifest(args, cfg, out, replicates=args.replicates,
              seeds=[cfg.seed], grid=step, threads=resolve_threads(args.threads))
    print(f"ran {args.replicates} replicates "
          f"({summary['failed']} failed, {summary['extinct_at_end']} extinct) -> {out}")
    return 0


def _cmd_observables(args) -> int:
    cfg = _load(args)
    out = _outdir(args)
    trace = simulate(cfg, replicate=args.replicate)
    g, grad, lap = gaussian_bump_g(args.g_center, args.g_width)
    f = make_test_function(g, grad, lap, horizon=cfg.horizon, G=args.G,
                           dimension=cfg.dimension)
    series = martingale_residual(trace, f)
    lines = ["time,residual,bracket"]
    lines += [f"{tf.fmt17(t)},{tf.fmt17(r)},{tf.fmt17(b)}"
              for t, r, b in zip(series.times, series.residual, series.bracket)]
    (out / "residual.csv").write_text("\n".join(lines) + "\n")
    T = cfg.horizon
    taus = [0.0, 0.25 * T, 0.5 * T, 0.75 * T, T]
    alive = len(trace.alive_ids(T))
    tf.write_json({
        "label": cfg.label, "replicate": args.replicate, "seed": cfg.seed,
        "terminal_residual": series.terminal,
        "terminal_bracket": series.terminal_bracket,
        "alive": alive, "extinct": alive == 0,
        "family_taus": taus,
        "family_counts": [family_count(trace, T, tau) for tau in taus],
    }, out / "summary.json")
    tf.write_lineages(trace, out / "lineages.jsonl", T, args.sample,
                      rng_for(cfg.seed ^ 0x5EED, args.replicate))
    _manifest(args, cfg, out, replicate=args.replicate, sample=args.sample,
              G=args.G, g_center=args.g_center, g_width=args.g_width)
    print(f"residual over {len(series.times)} knots -> {out}")
    return 0


def _fk_times(args) -> list[float]:
    if args.grid:
        k = max(1, round(args.t / args.grid))
        return [args.t * (i + 1) / k for i in range(k)]
    return [args.t]


def _cmd_fk(args) -> int:
    from .fk import FkEstimate, feller_mass_sample, fk1_estimator, fk2_estimator
    out = _outdir(args)
    rng = rng_for(args.seed, 0)
    times = _fk_times(args)
    rows = []
    if args.mode == "fk1":
        gamma = ((lambda s, x: np.zeros(len(x))) if args.gamma == "zero"
                 else (lambda s, x: 0.5 * np.tanh(x[:, 0])))
        for t in times:
            rows.append(fk1_estimator(gamma, lambda w: float(w.terminal[0]),
                                      t, args.paths, args.h, rng))
    elif args.mode == "fk2":
        for t in times:
            rows.append(fk2_estimator(lambda w: float(w.terminal[0]), t,
                                      args.alpha, args.eta, args.r_bar,
                                      args.paths, args.h, rng,
                                      initial_mass=args.initial_mass))
    else:  # feller
        for t in times:
            s = feller_mass_sample(args.initial_mass, args.gamma_bar,
                                   args.r_bar, t, args.h, rng, size=args.paths)
            s2 = feller_mass_sample(args.initial_mass, args.gamma_bar,
                                    args.r_bar, t, 0.5 * args.h, rng,
                                    size=args.paths)
            rows.append(FkEstimate(value=float(s.mean()),
                                   se=float(s.std() / math.sqrt(len(s))),
                                   paths=args.paths, step=args.h,
                                   halved_value=float(s2.mean())))
    last = rows[-1]
    tf.write_json({
        "mode": args.mode, "estimator": last.value, "se": last.se,
        "M": last.paths, "h": last.step, "halved": last.halved_value,
        "series": {"times": times, "values": [r.value for r in rows],
                   "se": [r.se for r in rows],
                   "halved": [r.halved_value for r in rows]},
        "parameters": {k: getattr(args, k) for k in
                       ("gamma", "alpha", "eta", "r_bar", "gamma_bar",
                        "initial_mass") if hasattr(args, k)},
        "seed": args.seed,
    }, out / "fk-report.json")
    print(f"{args.mode} at t={times[-1]}: {last.value:.6g} +- {last.se:.2g} -> {out}")
    return 0


def _cmd_skorokhod(args) -> int:
    from .acceptance import dp_oracle_check, stability_campaign
    rng = np.random.default_rng(args.seed)
    report = stability_campaign(args.trials, rng)
    ok_dp, worst = dp_oracle_check(100, np.random.default_rng(args.seed + 1))
    print(f"premise-satisfying triples: {report['trials']}")
    print(f"conclusion d < 3*eps held in {report['held']} "
          f"({100.0 * report['held'] / report['trials']:.2f}%)")
    if report["violations"]:
        v = report["violations"][0]
        print(f"first violation: d={v['distance']:.6g} vs 3*eps={3 * v['eps']:.6g}")
    print(f"dynamic-programming distance vs brute force: "
          f"{'agrees' if ok_dp else 'DISAGREES'} (worst gap {worst:.2e})")
    if args.out:
        out = _outdir(args)
        tf.write_json({"campaign": report, "dp_matches_bruteforce": ok_dp,
                       "dp_worst_gap": worst}, out / "skorokhod.json")
    return 0


def _cmd_scenarios(args) -> int:
    for name in sorted(SCENARIOS):
        cfg = scenario(name)
        r = cfg.rates
        print(f"{name}: n={cfg.n}, horizon={cfg.horizon}, d={cfg.dimension}, "
              f"founders={len(cfg.initial_traits)} at {cfg.initial_traits[0].tolist()}, "
              f"p={cfg.mutation.probability}, sigma^2={cfg.mutation.variance}")
        print(f"  R={r.R!r}  B={r.B!r}")
        print(f"  D={r.D!r}  U={r.U!r}")
        print(f"  kernels: nu_r={r.nu_r!r} nu_b={r.nu_b!r} nu_d={r.nu_d!r}")
    return 0


def _cmd_acceptance(args) -> int:
    from .acceptance import run_acceptance
    results = run_acceptance(quick=args.quick, numbers=args.only)
    failed = [r for r in results if not r.passed]
    for r in results:
        print(r.line())
    if failed:
        print(f"\n{len(failed)} criterion(s) failed: "
              + ", ".join(str(r.number) for r in failed), file=sys.stderr)
        return 3
    print(f"\nall {len(results)} criteria passed")
    return 0


def build_parser() -> _Parser:
    p = _Parser(prog="lineagesim",
                description="Exact lineage-carrying birth-death simulation")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(q, out_required=True):
        q.add_argument("--config", help="config file path")
        q.add_argument("--scenario", help="built-in scenario name")
        q.add_argument("--seed", type=int, default=None, help="override RNG seed")
        q.add_argument("--horizon", type=float, default=None)
        q.add_argument("--n", type=int, default=None)
        q.add_argument("--out", required=out_required, help="output directory")

    q = sub.add_parser("simulate", help="one replicate -> trace files")
    common(q)
    q.add_argument("--replicate", type=int, default=0)
    q.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    q.set_defaults(fn=_cmd_simulate)

    q = sub.add_parser("replicates", help="batch of replicates -> summary")
    common(q)
    q.add_argument("--replicates", type=int, default=20)
    q.add_argument("--threads", type=int, default=None)
    q.add_argument("--grid", type=float, default=None, help="summary time step")
    q.set_defaults(fn=_cmd_replicates)

    q = sub.add_parser("observables", help="martingale residual, families, lineages")
    common(q)
    q.add_argument("--replicate", type=int, default=0)
    q.add_argument("--sample", type=int, default=5, help="lineages to sample")
    q.add_argument("--G", choices=("identity", "exp-neg"), default="exp-neg")
    q.add_argument("--g-center", type=float, default=0.0, dest="g_center")
    q.add_argument("--g-width", type=float, default=1.0, dest="g_width")
    q.set_defaults(fn=_cmd_observables)

    q = sub.add_parser("fk", help="branching-free Monte Carlo estimates")
    q.add_argument("--mode", choices=("fk1", "fk2", "feller"), required=True)
    q.add_argument("--t", type=float, default=1.0)
    q.add_argument("--paths", "-M", type=int, default=10_000)
    q.add_argument("--h", type=float, default=1e-3)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--grid", type=float, default=None, help="report a time series")
    q.add_argument("--gamma", choices=("zero", "tanh"), default="zero")
    q.add_argument("--alpha", type=float, default=1.0)
    q.add_argument("--eta", type=float, default=0.5)
    q.add_argument("--r-bar", type=float, default=1.0, dest="r_bar")
    q.add_argument("--gamma-bar", type=float, default=0.0, dest="gamma_bar")
    q.add_argument("--initial-mass", type=float, default=1.0, dest="initial_mass")
    q.add_argument("--out", required=True)
    q.set_defaults(fn=_cmd_fk)

    q = sub.add_parser("skorokhod", help="distance oracle and stability campaign")
    q.add_argument("--trials", type=int, default=10_000)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", default=None)
    q.set_defaults(fn=_cmd_skorokhod)

    q = sub.add_parser("scenarios", help="list built-in scenarios")
    q.set_defaults(fn=_cmd_scenarios)

    q = sub.add_parser("acceptance", help="run the acceptance suite")
    q.add_argument("--quick", action="store_true", help="reduced sizes")
    q.add_argument("--only", type=int, nargs="*", default=None,
                   help="criterion numbers to run")
    q.set_defaults(fn=_cmd_acceptance)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.fn(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ExplosionError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
