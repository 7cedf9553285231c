"""Config files: parse the sectioned text format into a ModelConfig and back.

Sections: [model] scalars, [rates] the four rate callables plus their bounds,
[kernels] the three memory kernels, [mutation], [initial], [rng]. Rate
callables are inline tables dispatched on their "form" key. Serialization is
canonical (fixed key order, floats at 17 significant digits), so
parse -> serialize -> parse is the identity and equal configs serialize to
equal bytes.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from pathlib import Path

import numpy as np
import tomli

from .model import (
    ConstantCompetition, ConstantPathRate, ConstantRate, GaussianCompetition,
    GaussianDensityCompetition, GaussianPeak, KisdiCompetition, MemoryKernel,
    ModelConfig, MutationKernel, RateSpec, TanhShiftRate,
)

MEMORY_RATE_FORMS = {c.form: c for c in (ConstantRate, GaussianPeak, TanhShiftRate)}
PATH_RATE_FORMS = {c.form: c for c in (ConstantPathRate,)}
COMPETITION_FORMS = {c.form: c for c in (
    ConstantCompetition, GaussianCompetition, GaussianDensityCompetition,
    KisdiCompetition)}

_BOUND_KEYS = ("R_low", "R_high", "B_high", "D_high", "U_high", "U_low")


class ConfigError(ValueError):
    """Invalid configuration, pointing at the offending field."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


def _require(table: dict, key: str, where: str):
    if key not in table:
        raise ConfigError(f"{where}.{key}" if where else key, "missing required key")
    return table[key]


def _as_float(v, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(where, f"expected a number, got {type(v).__name__}")
    return float(v)


def _as_int(v, where: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(where, f"expected an integer, got {type(v).__name__}")
    return v


def _build_rate(table, registry, where: str):
    if not isinstance(table, dict):
        raise ConfigError(where, "expected an inline table")
    form = _require(table, "form", where)
    if form not in registry:
        raise ConfigError(f"{where}.form",
                          f"unknown form {form!r}; choose from {sorted(registry)}")
    cls = registry[form]
    params = {k: v for k, v in table.items() if k != "form"}
    names = {f.name for f in dataclasses.fields(cls)}
    for k in params:
        if k not in names:
            raise ConfigError(f"{where}.{k}", f"unknown parameter for form {form!r}")
    try:
        return cls(**{k: _as_float(v, f"{where}.{k}") for k, v in params.items()})
    except TypeError as exc:
        raise ConfigError(where, str(exc)) from None
    except ValueError as exc:
        raise ConfigError(where, str(exc)) from None


def _build_kernel(table, where: str) -> MemoryKernel:
    if not isinstance(table, dict):
        raise ConfigError(where, "expected an inline table")
    for k in table:
        if k not in ("atoms", "exponentials"):
            raise ConfigError(f"{where}.{k}", "unknown kernel key")

    def rows(key):
        entries = table.get(key, [])
        if not isinstance(entries, list):
            raise ConfigError(f"{where}.{key}", "expected a list of pairs")
        out = []
        for i, row in enumerate(entries):
            if not isinstance(row, (list, tuple)) or len(row) != 2:
                raise ConfigError(f"{where}.{key}[{i}]", "expected a [a, b] pair")
            out.append((_as_float(row[0], f"{where}.{key}[{i}]"),
                        _as_float(row[1], f"{where}.{key}[{i}]")))
        return tuple(out)

    try:
        return MemoryKernel(atoms=rows("atoms"), exponentials=rows("exponentials"))
    except ValueError as exc:
        raise ConfigError(where, str(exc)) from None


def parse_config(text: str) -> ModelConfig:
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError("", f"invalid config syntax: {exc}") from None

    for section in ("model", "rates", "kernels", "mutation", "initial"):
        if section not in doc:
            raise ConfigError(section, "missing section")
        if not isinstance(doc[section], dict):
            raise ConfigError(section, "expected a table")
    known = {"model", "rates", "kernels", "mutation", "initial", "rng"}
    for section in doc:
        if section not in known:
            raise ConfigError(section, "unknown section")

    m = doc["model"]
    dimension = _as_int(_require(m, "dimension", "model"), "model.dimension")
    n = _as_int(_require(m, "n", "model"), "model.n")
    horizon = _as_float(_require(m, "horizon", "model"), "model.horizon")
    extras = {}
    if "explosion_cap" in m:
        extras["explosion_cap"] = _as_int(m["explosion_cap"], "model.explosion_cap")
    if "prune_cutoff" in m:
        extras["prune_cutoff"] = _as_float(m["prune_cutoff"], "model.prune_cutoff")
    if "interaction_grid" in m:
        extras["interaction_grid"] = _as_float(m["interaction_grid"],
                                               "model.interaction_grid")
    if "label" in m:
        if not isinstance(m["label"], str):
            raise ConfigError("model.label", "expected a string")
        extras["label"] = m["label"]
    for k in m:
        if k not in ("dimension", "n", "horizon", "explosion_cap",
                     "prune_cutoff", "interaction_grid", "label"):
            raise ConfigError(f"model.{k}", "unknown key")

    r = doc["rates"]
    for k in r:
        if k not in ("R", "B", "D", "U") + _BOUND_KEYS:
            raise ConfigError(f"rates.{k}", "unknown key")
    bounds = {k: _as_float(_require(r, k, "rates"), f"rates.{k}")
              for k in _BOUND_KEYS if k != "U_low"}
    if "U_low" in r:
        bounds["U_low"] = _as_float(r["U_low"], "rates.U_low")
    ker = doc["kernels"]
    for k in ker:
        if k not in ("nu_r", "nu_b", "nu_d"):
            raise ConfigError(f"kernels.{k}", "unknown key")
    try:
        rates = RateSpec(
            R=_build_rate(_require(r, "R", "rates"), MEMORY_RATE_FORMS, "rates.R"),
            B=_build_rate(_require(r, "B", "rates"), MEMORY_RATE_FORMS, "rates.B"),
            D=_build_rate(_require(r, "D", "rates"), PATH_RATE_FORMS, "rates.D"),
            U=_build_rate(_require(r, "U", "rates"), COMPETITION_FORMS, "rates.U"),
            **bounds,
            nu_r=_build_kernel(ker.get("nu_r", {}), "kernels.nu_r"),
            nu_b=_build_kernel(ker.get("nu_b", {}), "kernels.nu_b"),
            nu_d=_build_kernel(ker.get("nu_d", {}), "kernels.nu_d"),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError("rates", str(exc)) from None

    mu = doc["mutation"]
    for k in mu:
        if k not in ("probability", "variance"):
            raise ConfigError(f"mutation.{k}", "unknown key")
    try:
        mutation = MutationKernel(
            probability=_as_float(_require(mu, "probability", "mutation"),
                                  "mutation.probability"),
            variance=_as_float(_require(mu, "variance", "mutation"),
                               "mutation.variance"),
            n=n, dimension=dimension)
    except ValueError as exc:
        raise ConfigError("mutation", str(exc)) from None

    init = doc["initial"]
    if "traits" in init:
        for k in init:
            if k != "traits":
                raise ConfigError(f"initial.{k}", "traits excludes other keys")
        rows = init["traits"]
        if not isinstance(rows, list) or not rows:
            raise ConfigError("initial.traits", "expected a nonempty list of rows")
        traits = [[_as_float(v, f"initial.traits[{i}]") for v in row]
                  if isinstance(row, list) else
                  [_as_float(row, f"initial.traits[{i}]")]
                  for i, row in enumerate(rows)]
    elif "value" in init:
        for k in init:
            if k not in ("value", "count"):
                raise ConfigError(f"initial.{k}", "unknown key")
        val = init["value"]
        if not isinstance(val, list):
            val = [val]
        count = _as_int(init.get("count", 1), "initial.count")
        if count <= 0:
            raise ConfigError("initial.count", "must be positive")
        traits = [[_as_float(v, "initial.value") for v in val]] * count
    else:
        raise ConfigError("initial", "need either traits or value/count")

    seed = 0
    if "rng" in doc:
        for k in doc["rng"]:
            if k != "seed":
                raise ConfigError(f"rng.{k}", "unknown key")
        seed = _as_int(doc["rng"].get("seed", 0), "rng.seed")
        if seed < 0:
            raise ConfigError("rng.seed", "must be nonnegative")

    try:
        return ModelConfig(dimension=dimension, n=n, horizon=horizon,
                           rates=rates, mutation=mutation,
                           initial_traits=np.asarray(traits, dtype=float),
                           seed=seed, **extras)
    except ValueError as exc:
        raise ConfigError("model", str(exc)) from None


def load_config(path) -> ModelConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("", f"cannot read config: {exc}") from None
    return parse_config(text)


def _fmt_float(x: float) -> str:
    s = f"{float(x):.17g}"
    if not any(c in s for c in ".einf"):
        s += ".0"
    return s


def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return _fmt_float(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt_value(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {type(v).__name__}")


def _rate_table(obj) -> str:
    parts = [f'form = "{obj.form}"']
    for f in dataclasses.fields(obj):
        parts.append(f"{f.name} = {_fmt_float(getattr(obj, f.name))}")
    return "{ " + ", ".join(parts) + " }"


def _kernel_table(k: MemoryKernel) -> str:
    parts = []
    if k.atoms:
        parts.append("atoms = " + _fmt_value([list(a) for a in k.atoms]))
    if k.exponentials:
        parts.append("exponentials = " + _fmt_value([list(e) for e in k.exponentials]))
    return "{ " + ", ".join(parts) + " }" if parts else "{ }"


def serialize_config(cfg: ModelConfig) -> str:
    out = ["[model]",
           f"dimension = {cfg.dimension}",
           f"n = {cfg.n}",
           f"horizon = {_fmt_float(cfg.horizon)}",
           f"explosion_cap = {cfg.explosion_cap}",
           f"prune_cutoff = {_fmt_float(cfg.prune_cutoff)}"]
    if cfg.interaction_grid is not None:
        out.append(f"interaction_grid = {_fmt_float(cfg.interaction_grid)}")
    if cfg.label:
        out.append(f"label = {json.dumps(cfg.label)}")
    r = cfg.rates
    out += ["", "[rates]",
            f"R = {_rate_table(r.R)}",
            f"B = {_rate_table(r.B)}",
            f"D = {_rate_table(r.D)}",
            f"U = {_rate_table(r.U)}"]
    out += [f"{k} = {_fmt_float(getattr(r, k))}" for k in _BOUND_KEYS]
    out += ["", "[kernels]",
            f"nu_r = {_kernel_table(r.nu_r)}",
            f"nu_b = {_kernel_table(r.nu_b)}",
            f"nu_d = {_kernel_table(r.nu_d)}"]
    out += ["", "[mutation]",
            f"probability = {_fmt_float(cfg.mutation.probability)}",
            f"variance = {_fmt_float(cfg.mutation.variance)}"]
    traits = cfg.initial_traits
    out += ["", "[initial]"]
    if len(traits) > 1 and (traits == traits[0]).all():
        out.append("value = " + _fmt_value(list(traits[0])))
        out.append(f"count = {len(traits)}")
    else:
        out.append("traits = " + _fmt_value([list(row) for row in traits]))
    out += ["", "[rng]", f"seed = {cfg.seed}", ""]
    return "\n".join(out)


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()
