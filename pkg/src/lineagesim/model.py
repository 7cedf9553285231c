"""Model ingredients: memory kernels, bounded rates, mutation, scenarios.

Rates follow the allometric decomposition used throughout: an individual with
lineage y alive at time t reproduces at rate n*r + b and dies at rate
n*r + d, where

    r = R( integral of y_{t-s} nu_r(ds) )          bounded in [R_low, R_high]
    b = B( integral of y_{t-s} nu_b(ds) )          bounded in [0, B_high]
    d = D(t, y) + competition                      bounded D in [0, D_high]

and the competition term integrates a pair kernel U against the (possibly
past) population weighted by the death memory kernel nu_d.  Bounds are
declared up front and enforced at every evaluation; the simulation engine
relies on them for its dominating rates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .paths import StepPath, eval_at

__all__ = [
    "MemoryKernel", "MutationKernel", "RateSpec", "ModelConfig",
    "RateBoundError", "memory_integral", "birth_rate", "death_rate",
    "interaction_rate", "scenario", "SCENARIOS",
    "ConstantRate", "GaussianPeak", "ConstantPathRate",
    "ConstantCompetition", "GaussianCompetition",
    "GaussianDensityCompetition", "KisdiCompetition",
    "DIRAC_AT_ZERO",
]


class RateBoundError(RuntimeError):
    """A rate evaluation left its declared bound; the message names it."""


# --- memory kernels ---------------------------------------------------------

@dataclass(frozen=True)
class MemoryKernel:
    """Nonnegative measure on time lags: point atoms plus exponential
    densities sum_k w_k * exp(-alpha_k s) ds."""

    atoms: tuple[tuple[float, float], ...] = ()          # (offset, weight)
    exponentials: tuple[tuple[float, float], ...] = ()   # (alpha, weight)

    def __post_init__(self):
        for s0, w in self.atoms:
            if s0 < 0 or w <= 0:
                raise ValueError(f"atom (offset={s0}, weight={w}) invalid")
        for a, w in self.exponentials:
            if a <= 0 or w <= 0:
                raise ValueError(f"exponential (alpha={a}, weight={w}) invalid")

    def total_mass(self, T: float) -> float:
        """Mass of [0, T]."""
        m = sum(w for s0, w in self.atoms if s0 <= T)
        m += sum(w * (1.0 - math.exp(-a * T)) / a for a, w in self.exponentials)
        return m

    @property
    def is_empty(self) -> bool:
        return not self.atoms and not self.exponentials

    @property
    def is_dirac_at_zero(self) -> bool:
        """Single unit atom at lag zero: the kernel that reads the present."""
        return self.atoms == ((0.0, 1.0),) and not self.exponentials


DIRAC_AT_ZERO = MemoryKernel(atoms=((0.0, 1.0),))


def memory_integral(kernel: MemoryKernel, path: StepPath, t: float) -> np.ndarray:
    """Exact integral of y_{t-s} kernel(ds) over s in [0, t].

    Atoms are point evaluations; exponential parts integrate in closed form
    over the path's constant segments.
    """
    if t < 0:
        raise ValueError(f"memory integral needs t >= 0, got {t}")
    out = np.zeros(path.dimension)
    for s0, w in kernel.atoms:
        if s0 <= t:
            out += w * eval_at(path, t - s0)
    if kernel.exponentials:
        times = path.jump_times
        vals = path.values
        # constant segments [a_k, b_k) covering [0, t], last one closed at t
        for alpha, w in kernel.exponentials:
            acc = np.zeros(path.dimension)
            for k in range(len(times)):
                a = times[k]
                if a >= t:
                    break
                b = times[k + 1] if k + 1 < len(times) else t
                b = min(b, t)
                # integral of exp(-alpha (t-u)) du over [a, b)
                acc += vals[k] * (math.exp(-alpha * (t - b)) - math.exp(-alpha * (t - a)))
            out += (w / alpha) * acc
    return out


# --- mutation ---------------------------------------------------------------

@dataclass(frozen=True)
class MutationKernel:
    """Trait displacement at a birth: zero with probability 1-p, otherwise a
    centered Gaussian with covariance (variance / n) * identity."""

    probability: float
    variance: float
    n: int
    dimension: int = 1

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"mutation probability {self.probability} not in [0, 1]")
        if self.variance < 0:
            raise ValueError(f"mutation variance must be nonnegative, got {self.variance}")
        if self.n <= 0:
            raise ValueError(f"population scale n must be positive, got {self.n}")

    @property
    def step_std(self) -> float:
        return math.sqrt(self.variance / self.n)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        if rng.random() < self.probability:
            return rng.normal(0.0, self.step_std, self.dimension)
        return np.zeros(self.dimension)


# --- rate functions ---------------------------------------------------------
# Small callable dataclasses (picklable, serializable to config files).
# R and B read the memory vector; D reads (t, lineage); U reads
# (t, lineage, traits) where traits is an (m, d) array of competitor traits
# at the relevant past times, and returns an (m,) array.

@dataclass(frozen=True)
class ConstantRate:
    value: float
    form = "constant"

    def __call__(self, x: np.ndarray) -> float:
        return self.value


@dataclass(frozen=True)
class GaussianPeak:
    """height * exp(-|x - center|^2 / (2 width^2)) of the memory vector."""
    center: float
    width: float
    height: float = 1.0
    form = "gaussian-peak"

    def __call__(self, x: np.ndarray) -> float:
        x = np.asarray(x)
        if x.shape == (1,):
            q = (float(x[0]) - self.center) ** 2
        else:
            q = float(np.sum((x - self.center) ** 2))
        return self.height * math.exp(-q / (2.0 * self.width ** 2))


@dataclass(frozen=True)
class TanhShiftRate:
    """amplitude * tanh(x) + offset; bounded in [offset - |amplitude|,
    offset + |amplitude|] so nonnegativity needs offset >= |amplitude|."""
    amplitude: float
    offset: float
    form = "tanh-shift"

    def __post_init__(self):
        if self.offset < abs(self.amplitude):
            raise ValueError("tanh rate can go negative: need offset >= |amplitude|")

    def __call__(self, x: np.ndarray) -> float:
        x = np.asarray(x)
        s = float(x[0]) if x.shape == (1,) else float(x.sum())
        return self.amplitude * math.tanh(s) + self.offset


@dataclass(frozen=True)
class ConstantPathRate:
    value: float
    form = "constant"
    terminal_only = True

    def __call__(self, t: float, lineage: StepPath) -> float:
        return self.value


@dataclass(frozen=True)
class ConstantCompetition:
    value: float
    form = "constant"
    terminal_only = True
    symmetric = True

    def __call__(self, t: float, lineage: StepPath, traits: np.ndarray) -> np.ndarray:
        return np.full(len(traits), self.value)


@dataclass(frozen=True)
class GaussianCompetition:
    """scale * exp(-|y_t - x'|^2 / (2 width^2)) against each competitor."""
    width: float
    scale: float = 1.0
    form = "gaussian"
    terminal_only = True
    symmetric = True

    def __call__(self, t: float, lineage: StepPath, traits: np.ndarray) -> np.ndarray:
        x = eval_at(lineage, t)
        if traits.shape[1] == 1:
            q = traits[:, 0] - float(x[0])
            q *= q
        else:
            q = np.sum((traits - x) ** 2, axis=1)
        return self.scale * np.exp(-q / (2.0 * self.width ** 2))


@dataclass(frozen=True)
class GaussianDensityCompetition:
    """Gaussian density of given variance in (y_t - x'), divided by a
    carrying-capacity constant."""
    variance: float
    divisor: float
    form = "gaussian-density"
    terminal_only = True
    symmetric = True

    def __call__(self, t: float, lineage: StepPath, traits: np.ndarray) -> np.ndarray:
        x = eval_at(lineage, t)
        d = traits.shape[1]
        q = np.sum((traits - x) ** 2, axis=1)
        norm = (2.0 * math.pi * self.variance) ** (d / 2.0)
        return np.exp(-q / (2.0 * self.variance)) / (norm * self.divisor)


@dataclass(frozen=True)
class KisdiCompetition:
    """Asymmetric sigmoid competition (2/K)(1 - 1/(1 + a exp(-c (y_t - x'))));
    one-dimensional traits."""
    capacity: float
    a: float
    c: float
    form = "kisdi"
    terminal_only = True

    def __call__(self, t: float, lineage: StepPath, traits: np.ndarray) -> np.ndarray:
        x = float(eval_at(lineage, t)[0])
        diff = x - traits[:, 0]
        return (2.0 / self.capacity) * (1.0 - 1.0 / (1.0 + self.a * np.exp(-self.c * diff)))


# --- rate specification ------------------------------------------------------

@dataclass(frozen=True)
class RateSpec:
    R: object                    # memory vector -> allometric rate
    B: object                    # memory vector -> birth bonus
    D: object                    # (t, lineage) -> natural death rate
    U: object                    # (t, lineage, traits) -> per-pair rates
    R_low: float
    R_high: float
    B_high: float
    D_high: float
    U_high: float
    U_low: float = 1e-12         # declared infimum; not enforced pointwise
    nu_r: MemoryKernel = DIRAC_AT_ZERO
    nu_b: MemoryKernel = DIRAC_AT_ZERO
    nu_d: MemoryKernel = DIRAC_AT_ZERO

    def __post_init__(self):
        if not 0 < self.R_low <= self.R_high:
            raise ValueError("need 0 < R_low <= R_high")
        if self.B_high < 0 or self.D_high < 0:
            raise ValueError("B_high and D_high must be nonnegative")
        if not 0 < self.U_low <= self.U_high:
            raise ValueError("need 0 < U_low <= U_high")

    # bounded evaluations; the engine's dominating rates assume these hold
    def r_of(self, x: np.ndarray) -> float:
        v = float(self.R(x))
        if not self.R_low <= v <= self.R_high:
            raise RateBoundError(
                f"R value {v} outside declared bounds [{self.R_low}, {self.R_high}]")
        return v

    def b_of(self, x: np.ndarray) -> float:
        v = float(self.B(x))
        if not 0.0 <= v <= self.B_high:
            raise RateBoundError(
                f"B value {v} outside declared bounds [0, {self.B_high}]")
        return v

    def d_of(self, t: float, lineage: StepPath) -> float:
        v = float(self.D(t, lineage))
        if not 0.0 <= v <= self.D_high:
            raise RateBoundError(
                f"D value {v} outside declared bounds [0, {self.D_high}]")
        return v

    def u_of(self, t: float, lineage: StepPath, traits: np.ndarray) -> np.ndarray:
        v = np.asarray(self.U(t, lineage, traits), dtype=float)
        if len(v) and (v.min() <= 0.0 or v.max() > self.U_high):
            raise RateBoundError(
                f"U value outside declared bounds (0, {self.U_high}]")
        return v


@dataclass(frozen=True, eq=False)
class ModelConfig:
    dimension: int
    n: int
    horizon: float
    rates: RateSpec
    mutation: MutationKernel
    initial_traits: np.ndarray       # (m0, d)
    seed: int = 0
    explosion_cap: int = 1_000_000
    prune_cutoff: float = 1e-12      # decay threshold for exponential kernels
    interaction_grid: float | None = None  # opt-in binned competition, cell width
    label: str = ""

    def __eq__(self, other):
        if not isinstance(other, ModelConfig):
            return NotImplemented
        for f in fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name)
            same = np.array_equal(a, b) if f.name == "initial_traits" else a == b
            if not same:
                return False
        return True

    def __post_init__(self):
        traits = np.atleast_2d(np.asarray(self.initial_traits, dtype=float))
        if traits.shape[1] != self.dimension:
            raise ValueError("initial trait dimension mismatch")
        if self.n <= 0 or self.horizon <= 0:
            raise ValueError("n and horizon must be positive")
        if self.mutation.n != self.n or self.mutation.dimension != self.dimension:
            raise ValueError("mutation kernel must share n and dimension")
        object.__setattr__(self, "initial_traits", traits)

    def with_seed(self, seed: int) -> "ModelConfig":
        return replace(self, seed=seed)


# --- rate evaluation on lineages ---------------------------------------------

def birth_rate(t: float, lineage: StepPath, cfg: ModelConfig) -> float:
    """Total reproduction rate n*r + b of one individual at time t."""
    rs = cfg.rates
    r = rs.r_of(memory_integral(rs.nu_r, lineage, t))
    b = rs.b_of(memory_integral(rs.nu_b, lineage, t))
    return cfg.n * r + b


def interaction_rate(t: float, lineage: StepPath, history, cfg: ModelConfig) -> float:
    """Competition felt at time t: the pair kernel integrated against the
    population at past times weighted by nu_d.

    `history` provides the population's past:
      - traits_alive_at(u) -> (m, d) traits of individuals alive at time u
      - segments_until(t) -> (birth, end, traits) arrays, one row per
        individual born before t, with end = min(death, t)
    Atom parts are weighted sums over a past snapshot; exponential parts
    integrate each individual's lifetime segment in closed form.  Segments
    whose decay factor at t falls below cfg.prune_cutoff are dropped; the
    induced relative error is below 1e-9 for the default cutoff.
    """
    rs = cfg.rates
    total = 0.0
    for s0, w in rs.nu_d.atoms:
        u = t - s0
        if u < 0:
            continue
        traits = history.traits_alive_at(u)
        if len(traits):
            total += w * float(np.sum(rs.u_of(t, lineage, traits))) / cfg.n
    if rs.nu_d.exponentials:
        birth, end, traits = history.segments_until(t)
        for alpha, w in rs.nu_d.exponentials:
            decay_end = np.exp(-alpha * (t - end))
            keep = decay_end >= cfg.prune_cutoff
            if not np.any(keep):
                continue
            weight = (decay_end[keep] - np.exp(-alpha * (t - birth[keep]))) / alpha
            total += w * float(np.sum(rs.u_of(t, lineage, traits[keep]) * weight)) / cfg.n
    return total


def death_rate(t: float, lineage: StepPath, history, cfg: ModelConfig) -> float:
    """Total death rate n*r + D + competition of one individual at time t."""
    rs = cfg.rates
    r = rs.r_of(memory_integral(rs.nu_r, lineage, t))
    return cfg.n * r + rs.d_of(t, lineage) + interaction_rate(t, lineage, history, cfg)


# --- named scenarios ----------------------------------------------------------

def _dieckmann_doebeli(sigma_U: float = 0.3, n: int = 300, horizon: float = 2.0,
                       start: float = 1.5, sigma: float = 0.4, sigma_b: float = 0.4,
                       p: float = 0.5, count: int | None = None,
                       seed: int = 0) -> ModelConfig:
    """Symmetric-competition branching: Gaussian birth peak at trait 2,
    Gaussian competition of width sigma_U, instantaneous memory."""
    count = n if count is None else count
    rates = RateSpec(
        R=ConstantRate(1.0), B=GaussianPeak(2.0, sigma_b, 1.0),
        D=ConstantPathRate(0.0), U=GaussianCompetition(sigma_U, 1.0),
        R_low=1.0, R_high=1.0, B_high=1.0, D_high=0.0, U_high=1.0,
        nu_r=DIRAC_AT_ZERO, nu_b=DIRAC_AT_ZERO, nu_d=DIRAC_AT_ZERO)
    return ModelConfig(
        dimension=1, n=n, horizon=horizon, rates=rates,
        mutation=MutationKernel(p, sigma ** 2, n, 1),
        initial_traits=np.full((count, 1), start), seed=seed,
        label="dieckmann-doebeli")


def _adler_goats(alpha: float = 10.0, epsilon: float = 0.8, b: float = 0.75,
                 sigma: float = 1.0, p: float = 1.0, capacity: float = 50.0,
                 n: int = 50, count: int = 100, start: float = 1.5,
                 horizon: float = 2.0, seed: int = 0) -> ModelConfig:
    """Grazing-front scenario: constant births, exponentially fading memory of
    past occupancy, Gaussian-density competition scaled by a capacity."""
    u_high = 1.0 / (math.sqrt(2.0 * math.pi * epsilon) * capacity)
    rates = RateSpec(
        R=ConstantRate(1.0), B=ConstantRate(b), D=ConstantPathRate(0.0),
        U=GaussianDensityCompetition(epsilon, capacity),
        R_low=1.0, R_high=1.0, B_high=b, D_high=0.0, U_high=u_high,
        nu_r=DIRAC_AT_ZERO, nu_b=DIRAC_AT_ZERO,
        nu_d=MemoryKernel(exponentials=((alpha, 1.0),)))
    return ModelConfig(
        dimension=1, n=n, horizon=horizon, rates=rates,
        mutation=MutationKernel(p, sigma ** 2, n, 1),
        initial_traits=np.full((count, 1), start), seed=seed,
        label="adler-goats")


def _neutral(R_bar: float = 1.0, gamma_bar: float = 0.0, n: int = 50,
             count: int | None = None, start: float = 0.0, horizon: float = 1.0,
             p: float = 1.0, sigma2: float = 1.0, seed: int = 0) -> ModelConfig:
    """Trait-independent rates, no competition: b - d = gamma_bar."""
    count = n if count is None else count
    rates = RateSpec(
        R=ConstantRate(R_bar), B=ConstantRate(max(gamma_bar, 0.0)),
        D=ConstantPathRate(max(-gamma_bar, 0.0)), U=ConstantCompetition(1.0),
        R_low=R_bar, R_high=R_bar, B_high=max(gamma_bar, 0.0),
        D_high=max(-gamma_bar, 0.0), U_high=1.0,
        nu_r=DIRAC_AT_ZERO, nu_b=DIRAC_AT_ZERO, nu_d=MemoryKernel())
    return ModelConfig(
        dimension=1, n=n, horizon=horizon, rates=rates,
        mutation=MutationKernel(p, sigma2, n, 1),
        initial_traits=np.full((count, 1), start), seed=seed, label="neutral")


def _logistic(alpha: float = 1.0, eta: float = 0.5, R_bar: float = 1.0,
              n: int = 50, count: int | None = None, start: float = 0.0,
              horizon: float = 1.0, p: float = 1.0, sigma2: float = 1.0,
              seed: int = 0) -> ModelConfig:
    """Constant birth bonus alpha, mass competition eta: b - d = alpha - eta*mass."""
    count = n if count is None else count
    rates = RateSpec(
        R=ConstantRate(R_bar), B=ConstantRate(alpha),
        D=ConstantPathRate(0.0), U=ConstantCompetition(eta),
        R_low=R_bar, R_high=R_bar, B_high=alpha, D_high=0.0,
        U_high=eta, U_low=eta,
        nu_r=DIRAC_AT_ZERO, nu_b=DIRAC_AT_ZERO, nu_d=DIRAC_AT_ZERO)
    return ModelConfig(
        dimension=1, n=n, horizon=horizon, rates=rates,
        mutation=MutationKernel(p, sigma2, n, 1),
        initial_traits=np.full((count, 1), start), seed=seed, label="logistic")


SCENARIOS = {
    "dieckmann-doebeli": _dieckmann_doebeli,
    "adler-goats": _adler_goats,
    "neutral": _neutral,
    "logistic": _logistic,
}


def scenario(name: str, **overrides) -> ModelConfig:
    """Build a named scenario; keyword overrides replace its defaults."""
    try:
        factory = SCENARIOS[name]
    except KeyError:
        raise ValueError(
            f"unknown scenario {name!r}; available: {sorted(SCENARIOS)}") from None
    return factory(**overrides)
