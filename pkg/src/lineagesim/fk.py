"""Branching-free Monte Carlo oracles for the renormalized intensity.

Three ingredients: the trait diffusion driven by the allometric rate, two
self-normalized Feynman-Kac ratio estimators (non-interacting and logistic),
and the square-root mass diffusion that the rescaled total mass approaches.
These never touch the event engine, so agreement with particle replicates is
a genuine cross-check between independent simulation schemes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .engine import Trace, lineage_of
from .model import ConstantRate, ModelConfig, memory_integral
from .paths import step_path


class DegenerateEstimateError(RuntimeError):
    """Ratio estimator with an all-zero denominator (every replicate extinct)."""


@dataclass(frozen=True)
class DiffusionPath:
    """Euler path on a uniform grid: times (K+1,), values (K+1, d)."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if len(self.times) < 2 or len(self.times) != len(self.values):
            raise ValueError("need one value per grid point, at least two points")
        steps = np.diff(self.times)
        if not np.allclose(steps, steps[0]) or steps[0] <= 0:
            raise ValueError("grid must be uniform with positive step")

    @property
    def step(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def dimension(self) -> int:
        return self.values.shape[1] if self.values.ndim == 2 else 1

    @property
    def terminal(self) -> np.ndarray:
        return np.atleast_1d(self.values[-1])


@dataclass(frozen=True)
class FkEstimate:
    """Self-normalized ratio estimate with a delta-method standard error.

    halved_value reruns the time integrals and functionals on the same
    Brownian draws at half the step, isolating discretization bias from
    Monte Carlo noise.
    """

    value: float
    se: float
    paths: int
    step: float
    halved_value: float


@dataclass(frozen=True)
class IntensityEstimate:
    value: float
    se: float
    replicates: int
    mean_mass: float


def _grid(t: float, h: float) -> tuple[int, float]:
    # snap the step so the grid covers [0, t] exactly
    if h <= 0 or t <= 0:
        raise ValueError("need positive horizon and step")
    steps = max(1, round(t / h))
    return steps, t / steps


def _ratio_with_se(num: np.ndarray, den: np.ndarray) -> tuple[float, float]:
    m = len(num)
    nb, db = num.mean(), den.mean()
    if db <= 0.0:
        raise DegenerateEstimateError("denominator mean is zero: no surviving weight")
    ratio = nb / db
    if m < 2:
        return ratio, math.inf
    cov = np.cov(num, den, ddof=1)
    var = (cov[0, 0] - 2.0 * ratio * cov[0, 1] + ratio * ratio * cov[1, 1]) / (
        db * db * m)
    return ratio, math.sqrt(max(var, 0.0))


def simulate_Y(cfg: ModelConfig, t: float, h: float,
               rng: np.random.Generator) -> DiffusionPath:
    """Euler path of dY = sqrt(sigma^2 p r) dB with r read off the past path.

    The allometric rate sees the discrete path as a step function, so memory
    kernels integrate it exactly segment by segment.
    """
    steps, dt = _grid(t, h)
    d = cfg.dimension
    rates = cfg.rates
    sp = cfg.mutation.variance * cfg.mutation.probability
    times = np.linspace(0.0, t, steps + 1)
    vals = np.empty((steps + 1, d))
    vals[0] = cfg.initial_traits[0]
    const_r = rates.r_of(np.zeros(d)) if isinstance(rates.R, ConstantRate) else None
    dirac = rates.nu_r.is_dirac_at_zero
    noise = rng.standard_normal((steps, d))
    for k in range(steps):
        if const_r is not None:
            r = const_r
        elif dirac:
            r = rates.r_of(vals[k])
        else:
            past = step_path(times[:k + 1], vals[:k + 1])
            r = rates.r_of(memory_integral(rates.nu_r, past, times[k]))
        vals[k + 1] = vals[k] + math.sqrt(sp * r * dt) * noise[k]
    return DiffusionPath(times=times, values=vals)


def _brownian_batch(m: int, fine_steps: int, dt_fine: float, d: int,
                    start: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    out = np.empty((m, fine_steps + 1, d))
    out[:, 0, :] = start
    inc = rng.standard_normal((m, fine_steps, d)) * math.sqrt(dt_fine)
    np.cumsum(inc, axis=1, out=inc)
    out[:, 1:, :] = start + inc
    return out


def _trapezoid_pair(grid_vals: np.ndarray, dt_fine: float) -> tuple[np.ndarray, np.ndarray]:
    """Trapezoid integrals over the fine grid and over every second point."""
    w = np.full(grid_vals.shape[1], dt_fine)
    w[0] = w[-1] = 0.5 * dt_fine
    fine = grid_vals @ w
    coarse_vals = grid_vals[:, ::2]
    wc = np.full(coarse_vals.shape[1], 2.0 * dt_fine)
    wc[0] = wc[-1] = dt_fine
    return fine, coarse_vals @ wc


def fk1_estimator(gamma, phi, t: float, M: int, h: float,
                  rng: np.random.Generator, dimension: int = 1,
                  initial_value: float | np.ndarray = 0.0,
                  batch_size: int = 1024) -> FkEstimate:
    """Importance-weighted mean of phi over Brownian paths, weight e^{int gamma}.

    Valid when sigma^2 p r is normalized to 1, so the driving trait process
    is a standard Brownian motion. gamma(s, x) must accept an (m, d) block of
    path values at time s and return (m,); phi maps one DiffusionPath to a
    float. Each path is simulated once at step h/2; the h-grid is every
    second point, which makes value and halved_value differ only by
    discretization.
    """
    steps, dt = _grid(t, h)
    fine = 2 * steps
    dtf = 0.5 * dt
    d = dimension
    start = np.broadcast_to(np.atleast_1d(np.asarray(initial_value, dtype=float)), (d,))
    tf = np.linspace(0.0, t, fine + 1)
    tc = tf[::2]
    num_c, den_c, num_f, den_f = [], [], [], []
    done = 0
    while done < M:
        m = min(batch_size, M - done)
        paths = _brownian_batch(m, fine, dtf, d, start, rng)
        gvals = np.empty((m, fine + 1))
        for k in range(fine + 1):
            gvals[:, k] = gamma(tf[k], paths[:, k, :])
        int_f, int_c = _trapezoid_pair(gvals, dtf)
        w_f, w_c = np.exp(int_f), np.exp(int_c)
        for i in range(m):
            pf = phi(DiffusionPath(times=tf, values=paths[i]))
            pc = phi(DiffusionPath(times=tc, values=paths[i, ::2]))
            num_f.append(pf * w_f[i])
            num_c.append(pc * w_c[i])
        den_f.extend(w_f)
        den_c.extend(w_c)
        done += m
    value, se = _ratio_with_se(np.asarray(num_c), np.asarray(den_c))
    halved, _ = _ratio_with_se(np.asarray(num_f), np.asarray(den_f))
    return FkEstimate(value=value, se=se, paths=M, step=dt, halved_value=halved)


def _sqrt_diffusion_batch(n0: float, drift, r_bar: float, steps: int, dt: float,
                          m: int, rng: np.random.Generator) -> np.ndarray:
    """Full-truncation Euler for dN = drift(N)dt + sqrt(2 R N)dB, (m, steps+1)."""
    out = np.empty((m, steps + 1))
    n = np.full(m, float(n0))
    out[:, 0] = n
    root = math.sqrt(2.0 * r_bar * dt)
    for k in range(steps):
        pos = np.maximum(n, 0.0)
        n = n + drift(pos) * dt + root * np.sqrt(pos) * rng.standard_normal(m)
        out[:, k + 1] = n
    return out


def simulate_logistic_N(n0: float, alpha: float, eta: float, r_bar: float,
                        t: float, h: float,
                        rng: np.random.Generator) -> DiffusionPath:
    """One Euler path of dN = (2R + alpha N - eta N^2)dt + sqrt(2 R N)dB.

    This is the size-biased mass companion of the logistic estimator; the
    +2R term is its immigration part and does not belong to the plain mass
    diffusion.
    """
    if n0 < 0 or eta < 0:
        raise ValueError("need n0 >= 0 and eta >= 0")
    steps, dt = _grid(t, h)
    drift = lambda x: 2.0 * r_bar + alpha * x - eta * x * x
    vals = _sqrt_diffusion_batch(n0, drift, r_bar, steps, dt, 1, rng)[0]
    return DiffusionPath(times=np.linspace(0.0, t, steps + 1),
                         values=vals[:, None])


def fk2_estimator(phi, t: float, alpha: float, eta: float, r_bar: float,
                  M: int, h: float, rng: np.random.Generator,
                  initial_mass: float = 1.0,
                  batch_size: int = 1024) -> FkEstimate:
    """Logistic-case ratio estimator with weight e^{int (alpha N - eta N^2)}.

    N follows the immigration-augmented mass diffusion started from the
    population's initial mass and is drawn independently of the Brownian
    trait path, as the representation requires. Normalization sigma^2 p
    R = 1 is assumed for the trait motion.
    """
    steps, dt = _grid(t, h)
    fine = 2 * steps
    dtf = 0.5 * dt
    tf = np.linspace(0.0, t, fine + 1)
    tc = tf[::2]
    drift = lambda x: 2.0 * r_bar + alpha * x - eta * x * x
    num_c, den_c, num_f, den_f = [], [], [], []
    done = 0
    while done < M:
        m = min(batch_size, M - done)
        paths = _brownian_batch(m, fine, dtf, 1, np.zeros(1), rng)
        npaths = _sqrt_diffusion_batch(initial_mass, drift, r_bar, fine, dtf, m, rng)
        np.maximum(npaths, 0.0, out=npaths)
        gvals = alpha * npaths - eta * npaths * npaths
        int_f, int_c = _trapezoid_pair(gvals, dtf)
        w_f, w_c = np.exp(int_f), np.exp(int_c)
        for i in range(m):
            pf = phi(DiffusionPath(times=tf, values=paths[i]))
            pc = phi(DiffusionPath(times=tc, values=paths[i, ::2]))
            num_f.append(pf * w_f[i])
            num_c.append(pc * w_c[i])
        den_f.extend(w_f)
        den_c.extend(w_c)
        done += m
    value, se = _ratio_with_se(np.asarray(num_c), np.asarray(den_c))
    halved, _ = _ratio_with_se(np.asarray(num_f), np.asarray(den_f))
    return FkEstimate(value=value, se=se, paths=M, step=dt, halved_value=halved)


def feller_mass_sample(n0: float, gamma_bar: float, r_bar: float, t: float,
                       h: float, rng: np.random.Generator,
                       size: int | None = None):
    """Terminal value(s) of dN = gamma_bar N dt + sqrt(2 R N)dB from N_0 = n0.

    The limit law of the rescaled total mass under constant rates. Returns a
    scalar when size is None, else an array of independent samples; terminal
    values are clamped at zero, matching absorption of the mass at extinction.
    """
    if n0 < 0:
        raise ValueError("need n0 >= 0")
    steps, dt = _grid(t, h)
    m = 1 if size is None else int(size)
    drift = lambda x: gamma_bar * x
    out = np.empty(m)
    n = np.full(m, float(n0))
    root = math.sqrt(2.0 * r_bar * dt)
    for _ in range(steps):
        pos = np.maximum(n, 0.0)
        n = n + drift(pos) * dt + root * np.sqrt(pos) * rng.standard_normal(m)
    out = np.maximum(n, 0.0)
    return float(out[0]) if size is None else out


def particle_intensity_estimator(replicates, phi, t: float) -> IntensityEstimate:
    """mean <X_t, phi> / mean <X_t, 1> over engine traces, delta-method SE.

    phi maps one stopped lineage (a step path) to a float. Extinct
    replicates contribute zero to both sums; if every replicate is extinct
    the ratio is undefined and the degenerate case is raised.
    """
    num, den = [], []
    for tr in replicates:
        if not isinstance(tr, Trace):
            raise TypeError(f"expected Trace, got {type(tr).__name__}")
        scale = tr.config.n
        ids = tr.alive_ids(t)
        den.append(len(ids) / scale)
        num.append(sum(phi(lineage_of(tr, int(i), t=t)) for i in ids) / scale)
    if not num:
        raise ValueError("no replicates given")
    num, den = np.asarray(num), np.asarray(den)
    value, se = _ratio_with_se(num, den)
    return IntensityEstimate(value=value, se=se, replicates=len(num),
                             mean_mass=float(den.mean()))
