"""Path functionals, the compensator consistency check, genealogy queries.

The central objects are integral test functions

    G_g(y) = G( integral_0^T g(s, y_s) ds )

evaluated on lineage paths, their second-order trait perturbation D2, product
functions of finitely many time marginals with their discrete counterpart,
and mollified bridges between the two.  `martingale_residual` replays a trace
and checks the semimartingale decomposition of t -> <X_t, G_g(. stopped at t)>:
the residual after subtracting the compensator has mean zero, and its variance
is tracked by the accumulated bracket.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product as _cartesian

import numpy as np

from .engine import KIND_DEATH, Trace, lineage_of
from .model import ConstantPathRate, memory_integral
from .paths import StepPath, constant_path, eval_at, stop

__all__ = [
    "TestFunctionGg", "ProductTestFunction", "MartingaleSeries",
    "EmptyPopulationError", "DisjointAncestryError",
    "G_LIBRARY", "gaussian_bump_g", "exp_linear_g",
    "make_test_function", "eval_Gg", "eval_D2Gg",
    "eval_product", "tilde_delta", "mollify",
    "martingale_residual", "sample_lineage", "mrca", "family_count",
]


class EmptyPopulationError(RuntimeError):
    """Sampling was requested from a population with nobody alive."""


class DisjointAncestryError(RuntimeError):
    """The two individuals descend from different founders."""


# G outer functions: value, first and second derivative, all ufunc-style
G_LIBRARY = {
    "identity": (lambda x: x,
                 lambda x: np.ones_like(np.asarray(x, dtype=float)),
                 lambda x: np.zeros_like(np.asarray(x, dtype=float))),
    "exp-neg": (lambda x: np.exp(-x),
                lambda x: -np.exp(-x),
                lambda x: np.exp(-x)),
    "bump": (lambda x: np.exp(-0.5 * np.square(x)),
             lambda x: -x * np.exp(-0.5 * np.square(x)),
             lambda x: (np.square(x) - 1.0) * np.exp(-0.5 * np.square(x))),
}


def gaussian_bump_g(center: float = 0.0, width: float = 1.0):
    """Vectorized g(x) = exp(-|x-c|^2 / (2 w^2)) with gradient and Laplacian."""
    w2 = width * width

    def g(X):
        return np.exp(-0.5 * np.sum((X - center) ** 2, axis=1) / w2)

    def grad(X):
        vals = g(X)
        return -(X - center) / w2 * vals[:, None]

    def lap(X):
        q = np.sum((X - center) ** 2, axis=1)
        return (q / w2 - X.shape[1]) / w2 * np.exp(-0.5 * q / w2)

    return g, grad, lap


def exp_linear_g(slope: float = 0.3):
    """Vectorized g(x) = exp(slope * sum_i x_i)."""

    def g(X):
        return np.exp(slope * np.sum(X, axis=1))

    def grad(X):
        return np.full_like(X, slope) * g(X)[:, None]

    def lap(X):
        return X.shape[1] * slope * slope * g(X)

    return g, grad, lap


@dataclass
class TestFunctionGg:
    """Integral test function G(int_0^T g(s, y_s) ds).

    g, grad_g, lap_g act on (m, d) trait blocks and return (m,), (m, d), (m,)
    respectively; with time_dependent=True they take (s, X).  Optional
    g_time_integral(a, b, X) (and the grad/lap versions) supply exact values
    of int_a^b g(s, x) ds per row; otherwise time-dependent integrals fall
    back to fixed-order Gauss-Legendre on each constant segment.
    """

    G: object
    dG: object
    d2G: object
    g: object
    grad_g: object
    lap_g: object
    horizon: float
    time_dependent: bool = False
    g_time_integral: object = None
    grad_g_time_integral: object = None
    lap_g_time_integral: object = None
    quad_order: int = 16

    def g_at(self, s: float, X: np.ndarray) -> np.ndarray:
        return self.g(s, X) if self.time_dependent else self.g(X)

    def grad_g_at(self, s: float, X: np.ndarray) -> np.ndarray:
        return self.grad_g(s, X) if self.time_dependent else self.grad_g(X)

    def lap_g_at(self, s: float, X: np.ndarray) -> np.ndarray:
        return self.lap_g(s, X) if self.time_dependent else self.lap_g(X)

    def _segment(self, fn, exact, a: float, b: float, X: np.ndarray):
        """int_a^b fn(s, x) ds per trait row, over one constant segment."""
        if b < a:
            raise ValueError("segment must have a <= b")
        if not self.time_dependent:
            return (b - a) * fn(X)
        if b == a:
            return np.zeros_like(np.asarray(fn(a, X), dtype=float))
        if exact is not None:
            return exact(a, b, X)
        nodes, weights = np.polynomial.legendre.leggauss(self.quad_order)
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        acc = None
        for u, w in zip(nodes, weights):
            term = w * fn(mid + half * u, X)
            acc = term if acc is None else acc + term
        return half * acc

    def g_segment(self, a, b, X):
        return self._segment(self.g, self.g_time_integral, a, b, X)

    def grad_g_segment(self, a, b, X):
        return self._segment(self.grad_g, self.grad_g_time_integral, a, b, X)

    def lap_g_segment(self, a, b, X):
        return self._segment(self.lap_g, self.lap_g_time_integral, a, b, X)


def _check_derivatives(f: TestFunctionGg, dimension: int) -> None:
    rng = np.random.default_rng(1318)
    xs = rng.normal(0.0, 1.0, 6)
    eps = 1e-5
    for x in xs:
        fd = (float(f.G(x + eps)) - float(f.G(x - eps))) / (2 * eps)
        if abs(fd - float(f.dG(x))) > 1e-4 * (1 + abs(fd)):
            raise ValueError("dG is inconsistent with G on probe points")
        fd2 = (float(f.G(x + eps)) - 2 * float(f.G(x)) + float(f.G(x - eps))) / eps**2
        if abs(fd2 - float(f.d2G(x))) > 1e-3 * (1 + abs(fd2)):
            raise ValueError("d2G is inconsistent with G on probe points")
    X = rng.normal(0.0, 1.0, (5, dimension))
    s_probe = 0.37 * f.horizon
    eps = 1e-5

    def g_of(Z):
        return f.g_at(s_probe, Z)

    grad = f.grad_g_at(s_probe, X)
    lap = f.lap_g_at(s_probe, X)
    lap_fd = np.zeros(len(X))
    for i in range(dimension):
        E = np.zeros((1, dimension))
        E[0, i] = eps
        gp, gm, g0 = g_of(X + E), g_of(X - E), g_of(X)
        fd = (gp - gm) / (2 * eps)
        if np.max(np.abs(fd - grad[:, i])) > 1e-4 * (1 + np.max(np.abs(fd))):
            raise ValueError("grad_g is inconsistent with g on probe points")
        lap_fd += (gp - 2 * g0 + gm) / eps**2
    if np.max(np.abs(lap_fd - lap)) > 1e-3 * (1 + np.max(np.abs(lap_fd))):
        raise ValueError("lap_g is inconsistent with g on probe points")


def make_test_function(g, grad_g, lap_g, horizon: float, G="identity",
                       time_dependent: bool = False, dimension: int = 1,
                       g_time_integral=None, grad_g_time_integral=None,
                       lap_g_time_integral=None, quad_order: int = 16,
                       validate: bool = True) -> TestFunctionGg:
    """Assemble a TestFunctionGg; G is a library name or a (G, dG, d2G)
    triple.  Derivative consistency is checked on seeded probe points."""
    if isinstance(G, str):
        try:
            G, dG, d2G = G_LIBRARY[G]
        except KeyError:
            raise ValueError(
                f"unknown G {G!r}; available: {sorted(G_LIBRARY)}") from None
    else:
        G, dG, d2G = G
    f = TestFunctionGg(G=G, dG=dG, d2G=d2G, g=g, grad_g=grad_g, lap_g=lap_g,
                       horizon=horizon, time_dependent=time_dependent,
                       g_time_integral=g_time_integral,
                       grad_g_time_integral=grad_g_time_integral,
                       lap_g_time_integral=lap_g_time_integral,
                       quad_order=quad_order)
    if validate:
        _check_derivatives(f, dimension)
    return f


def path_integral_g(f: TestFunctionGg, path: StepPath) -> float:
    """int_0^T g(s, y_s) ds, exact over the path's constant segments."""
    T = f.horizon
    times = path.jump_times
    total = 0.0
    for k in range(len(times)):
        a = float(times[k])
        if a >= T:
            break
        b = float(times[k + 1]) if k + 1 < len(times) else T
        b = min(b, T)
        seg = f.g_segment(a, b, path.values[k:k + 1])
        total += float(seg[0])
    return total


def eval_Gg(f: TestFunctionGg, path: StepPath) -> float:
    return float(f.G(path_integral_g(f, path)))


def eval_D2Gg(f: TestFunctionGg, path: StepPath, t: float) -> float:
    """Sum over coordinates of the second epsilon-derivative of
    G_g(y stopped at t, with y_t nudged by epsilon) at epsilon = 0."""
    if not 0 <= t <= f.horizon:
        raise ValueError(f"time {t} outside [0, {f.horizon}]")
    y = stop(path, t)
    A = path_integral_g(f, y)
    xt = eval_at(y, t)[None, :]
    tail_grad = f.grad_g_segment(t, f.horizon, xt)[0]
    tail_lap = float(f.lap_g_segment(t, f.horizon, xt)[0])
    return float(f.dG(A)) * tail_lap + float(f.d2G(A)) * float(np.sum(tail_grad**2))


# --- product test functions ----------------------------------------------------

@dataclass
class ProductTestFunction:
    """phi(y) = prod_j g_j(y_{t_j}) for strictly increasing sample times.

    Each factor is a (g, grad_g, lap_g) triple acting on (m, d) blocks.
    """

    times: tuple
    factors: tuple       # tuples (g, grad_g, lap_g)

    def __post_init__(self):
        ts = tuple(float(t) for t in self.times)
        if len(ts) != len(self.factors) or not ts:
            raise ValueError("need one factor per sample time")
        if any(t2 <= t1 for t1, t2 in zip(ts, ts[1:])) or ts[0] < 0:
            raise ValueError("sample times must be nonnegative and increasing")
        self.times = ts
        self.factors = tuple(self.factors)

    @property
    def last_time(self) -> float:
        return self.times[-1]


def eval_product(phi: ProductTestFunction, path: StepPath) -> float:
    out = 1.0
    for t_j, (g, _, _) in zip(phi.times, phi.factors):
        out *= float(g(eval_at(path, t_j)[None, :])[0])
    return out


def tilde_delta(phi: ProductTestFunction, t: float, path: StepPath) -> float:
    """Discrete second-order operator on product functions: the trait
    Laplacian of the factors still ahead of t, frozen at y_t, scaled by the
    already-realized factors.  Zero once t has passed the last sample time.
    Products of complementary factors are expanded directly, never by
    dividing out a factor."""
    if t >= phi.last_time:
        return 0.0
    x = eval_at(path, t)[None, :]
    past = 1.0
    vals, grads, laps = [], [], []
    for t_j, (g, dg, lg) in zip(phi.times, phi.factors):
        if t_j <= t:
            past *= float(g(eval_at(path, t_j)[None, :])[0])
        else:
            vals.append(float(g(x)[0]))
            grads.append(dg(x)[0])
            laps.append(float(lg(x)[0]))
    q = len(vals)

    def prod_excluding(skip):
        out = 1.0
        for k in range(q):
            if k not in skip:
                out *= vals[k]
        return out

    total = 0.0
    for j in range(q):
        total += laps[j] * prod_excluding({j})
    for j in range(q):
        for l in range(q):
            if l != j:
                total += float(np.dot(grads[j], grads[l])) * prod_excluding({j, l})
    return past * total


def _phi_cdf(z: float) -> float:
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


def mollify(phi: ProductTestFunction, q: float, horizon: float,
            quad_order: int = 16) -> TestFunctionGg:
    """Smooth stand-in for a product function: G = exp and

        g_q(s, x) = sum_j log g_j(x) * k_q(t_j - s)

    with k_q the centered Gaussian density of variance 1/q.  As q grows,
    G_gq converges to phi at paths whose sample times avoid jump times.
    Factors must be strictly positive where evaluated.  Time integrals of
    k_q are exact via the normal CDF."""
    if q <= 0:
        raise ValueError("mollification sharpness q must be positive")
    root_q = math.sqrt(q)
    norm = root_q / math.sqrt(2.0 * math.pi)
    ts = phi.times
    factors = phi.factors

    def _logs(X):
        out = []
        for g, _, _ in factors:
            v = g(X)
            if np.any(v <= 0.0):
                raise ValueError(
                    "mollification requires strictly positive factors")
            out.append(np.log(v))
        return out

    def g(s, X):
        logs = _logs(X)
        acc = np.zeros(len(X))
        for t_j, lg in zip(ts, logs):
            acc += lg * (norm * math.exp(-0.5 * q * (t_j - s) ** 2))
        return acc

    def grad_g(s, X):
        acc = np.zeros_like(X)
        for t_j, (gf, dgf, _) in zip(ts, factors):
            v = gf(X)
            if np.any(v <= 0.0):
                raise ValueError(
                    "mollification requires strictly positive factors")
            k = norm * math.exp(-0.5 * q * (t_j - s) ** 2)
            acc += dgf(X) / v[:, None] * k
        return acc

    def lap_g(s, X):
        acc = np.zeros(len(X))
        for t_j, (gf, dgf, lgf) in zip(ts, factors):
            v = gf(X)
            if np.any(v <= 0.0):
                raise ValueError(
                    "mollification requires strictly positive factors")
            k = norm * math.exp(-0.5 * q * (t_j - s) ** 2)
            grad = dgf(X)
            acc += (lgf(X) / v - np.sum(grad * grad, axis=1) / (v * v)) * k
        return acc

    def kernel_mass(a, b, t_j):
        return _phi_cdf((t_j - a) * root_q) - _phi_cdf((t_j - b) * root_q)

    def g_int(a, b, X):
        logs = _logs(X)
        acc = np.zeros(len(X))
        for t_j, lg in zip(ts, logs):
            acc += lg * kernel_mass(a, b, t_j)
        return acc

    def grad_int(a, b, X):
        acc = np.zeros_like(X)
        for t_j, (gf, dgf, _) in zip(ts, factors):
            v = gf(X)
            if np.any(v <= 0.0):
                raise ValueError(
                    "mollification requires strictly positive factors")
            acc += dgf(X) / v[:, None] * kernel_mass(a, b, t_j)
        return acc

    def lap_int(a, b, X):
        acc = np.zeros(len(X))
        for t_j, (gf, dgf, lgf) in zip(ts, factors):
            v = gf(X)
            if np.any(v <= 0.0):
                raise ValueError(
                    "mollification requires strictly positive factors")
            grad = dgf(X)
            acc += (lgf(X) / v - np.sum(grad * grad, axis=1) / (v * v)) \
                * kernel_mass(a, b, t_j)
        return acc

    return TestFunctionGg(
        G=np.exp, dG=np.exp, d2G=np.exp, g=g, grad_g=grad_g, lap_g=lap_g,
        horizon=horizon, time_dependent=True, g_time_integral=g_int,
        grad_g_time_integral=grad_int, lap_g_time_integral=lap_int,
        quad_order=quad_order)


# --- martingale residual ---------------------------------------------------------

@dataclass
class MartingaleSeries:
    times: np.ndarray
    residual: np.ndarray
    bracket: np.ndarray

    @property
    def terminal(self) -> float:
        return float(self.residual[-1])

    @property
    def terminal_bracket(self) -> float:
        return float(self.bracket[-1])


def _hermite_nodes(quad_nodes: int, step_std: float, dimension: int):
    u, w = np.polynomial.hermite.hermgauss(quad_nodes)
    shift1 = math.sqrt(2.0) * step_std * u
    w1 = w / math.sqrt(math.pi)
    if dimension == 1:
        return shift1[:, None], w1
    shifts = np.array([list(c) for c in _cartesian(shift1, repeat=dimension)])
    weights = np.array([math.prod(c) for c in _cartesian(w1, repeat=dimension)])
    return shifts, weights


def martingale_residual(trace: Trace, f: TestFunctionGg,
                        max_step: float | None = None,
                        quad_nodes: int = 21) -> MartingaleSeries:
    """Residual M_t = <X_t, G_g> - <X_0, G_g> - (compensator up to t) and the
    accumulated predictable bracket, evaluated on the event grid refined so
    no integration step exceeds max_step (default horizon / 1000).

    The compensator combines, per alive individual, the allometric turnover
    n*r*(E_K[G_g after a trait nudge] - G_g), the birth term b*E_K[G_g], and
    the death term -(D + competition)*G_g; time integration uses the midpoint
    value on the refined grid (the integrand is smooth between events), exact
    segment arithmetic everywhere else.

    Configurations whose integrand state only changes at events (atom-at-zero
    kernels, constant D, time-independent g) replay on a cached fast path;
    the general path handles memory kernels and time-dependent test functions.
    """
    cfg = trace.config
    rs, n, T, d = cfg.rates, cfg.n, cfg.horizon, cfg.dimension
    if abs(f.horizon - T) > 1e-12:
        raise ValueError("test function horizon must match the trace horizon")
    if max_step is None:
        max_step = T / 1000.0
    p = cfg.mutation.probability
    shifts, weights = _hermite_nodes(quad_nodes, cfg.mutation.step_std, d)
    K = len(weights)

    dirac_rb = rs.nu_r.is_dirac_at_zero and rs.nu_b.is_dirac_at_zero
    const_D = rs.D.value if isinstance(rs.D, ConstantPathRate) else None
    atoms0 = tuple(w for s0, w in rs.nu_d.atoms if s0 == 0.0)
    atoms_shifted = tuple((s0, w) for s0, w in rs.nu_d.atoms if s0 > 0.0)
    exps = rs.nu_d.exponentials
    need_pairs = bool(atoms0) or bool(exps)
    sym_u = getattr(rs.U, "symmetric", False)

    # refined evaluation grid: event times plus fill points
    ev_times = trace.ev_time
    knots = [0.0]
    prev = 0.0
    for te in list(ev_times) + [T]:
        gap = te - prev
        if gap > max_step:
            extra = int(math.ceil(gap / max_step)) - 1
            knots.extend(prev + gap * (k + 1) / (extra + 1) for k in range(extra))
        if te < T:
            knots.append(te)
        prev = te
    knots.append(T)
    ev_index = {float(te): k for k, te in enumerate(ev_times)}

    # state over the alive set, maintained in replay order
    cap = max(16, 2 * trace.initial_count)
    ids = np.empty(cap, dtype=np.int64)
    X = np.empty((cap, d))
    c_acc = np.empty(cap)          # int_0^s g along each lineage
    r_vec = np.empty(cap)
    b_vec = np.empty(cap)
    P = np.empty(cap)              # sum over alive of U(x_i, x_j), self included
    S = {alpha: np.empty(cap) for alpha, _ in exps}
    posn = np.full(trace.node_count, -1, dtype=np.int64)
    lineages: dict[int, StepPath] = {}

    m = trace.initial_count
    ids[:m] = np.arange(m)
    X[:m] = trace.trait[:m]
    c_acc[:m] = 0.0
    posn[:m] = np.arange(m)

    probe = constant_path(np.zeros(d))

    def u_row(s, x_focal, traits):
        probe.values[0] = x_focal
        return rs.u_of(s, probe, traits)

    def ensure(mm):
        nonlocal cap, ids, X, c_acc, r_vec, b_vec, P, S
        nonlocal A0a, gxa, Fva, cw1a, cw2a, gsa
        if mm <= cap:
            return
        newcap = max(mm, 2 * cap)
        pad = newcap - cap
        ids = np.concatenate([ids, np.empty(pad, dtype=np.int64)])
        X = np.vstack([X, np.empty((pad, d))])
        c_acc = np.concatenate([c_acc, np.empty(pad)])
        r_vec = np.concatenate([r_vec, np.empty(pad)])
        b_vec = np.concatenate([b_vec, np.empty(pad)])
        P = np.concatenate([P, np.empty(pad)])
        S = {a: np.concatenate([v, np.empty(pad)]) for a, v in S.items()}
        if fast:
            A0a = np.concatenate([A0a, np.empty(pad)])
            gxa = np.concatenate([gxa, np.empty(pad)])
            Fva = np.concatenate([Fva, np.empty(pad)])
            cw1a = np.concatenate([cw1a, np.empty(pad)])
            cw2a = np.concatenate([cw2a, np.empty(pad)])
            if gsa is not None:
                gsa = np.vstack([gsa, np.empty((pad, K))])
        cap = newcap

    def lineage_for(i: int) -> StepPath:
        y = lineages.get(i)
        if y is None:
            y = lineage_of(trace, i)
            lineages[i] = y
        return y

    def set_rates(lo: int, hi: int, s: float) -> None:
        """Fill r_vec/b_vec rows [lo, hi) at time s."""
        for k in range(lo, hi):
            if dirac_rb:
                r_vec[k] = rs.r_of(X[k])
                b_vec[k] = rs.b_of(X[k])
            else:
                y = lineage_for(int(ids[k]))
                r_vec[k] = rs.r_of(memory_integral(rs.nu_r, y, s))
                b_vec[k] = rs.b_of(memory_integral(rs.nu_b, y, s))

    def recompute_pairs(s: float) -> None:
        for k in range(m):
            P[k] = float(u_row(s, X[k], X[:m]).sum())

    set_rates(0, m, 0.0)
    if need_pairs:
        recompute_pairs(0.0)
        for alpha in S:
            S[alpha][:m] = 0.0

    # Fast path: when rates and g sample the present only and D is constant,
    # every per-row quantity except the mutation tail is constant between
    # events, so rows are cached and only refreshed by births and deaths.
    # The total integral A0 = int_0^s g + (T - s) g(x) is itself constant.
    fast = (dirac_rb and not f.time_dependent and const_D is not None
            and not exps and not atoms_shifted)
    ident = f.G is G_LIBRARY["identity"][0]
    uw = float(sum(atoms0))
    A0a = gxa = Fva = cw1a = cw2a = gsa = None
    if fast:
        A0a = np.empty(cap)       # frozen-future total integral per row
        gxa = np.empty(cap)       # g at the row's trait
        Fva = np.empty(cap)       # G(A0)
        cw1a = np.empty(cap)      # identity-G moments of the nudged rows
        cw2a = np.empty(cap)
        gsa = None if ident else np.empty((cap, K))

        def fill_fast(k: int, s: float, base: float) -> None:
            x = X[k][None, :]
            gxa[k] = float(f.g_at(s, x)[0])
            A0a[k] = base + (T - s) * gxa[k]
            Fva[k] = float(f.G(A0a[k]))
            if p > 0.0:
                row = np.asarray(f.g_at(s, x + shifts), dtype=float)
                if ident:
                    c_row = row - gxa[k]
                    cw1a[k] = float(c_row @ weights)
                    cw2a[k] = float((c_row * c_row) @ weights)
                else:
                    gsa[k] = row

        for k in range(m):
            fill_fast(k, 0.0, 0.0)

    def newborn_discounted(alpha: float, x_new: np.ndarray, s: float) -> float:
        """int_0^s e^{-alpha (s-u)} sum_j U(x_new, x_j(u)) du over all past
        lifetime segments, evaluated in closed form."""
        born = trace.birth < s
        if not np.any(born):
            return 0.0
        bb = trace.birth[born]
        ee = np.minimum(trace.death[born], s)
        decay_end = np.exp(-alpha * (s - ee))
        keep = decay_end >= cfg.prune_cutoff
        if not np.any(keep):
            return 0.0
        w_seg = (decay_end[keep] - np.exp(-alpha * (s - bb[keep]))) / alpha
        u_vals = u_row(s, x_new, trace.trait[born][keep])
        return float(np.dot(u_vals, w_seg))

    def d_vector(s: float) -> np.ndarray:
        if const_D is not None:
            base = np.full(m, const_D)
        else:
            base = np.array([rs.d_of(s, stop(lineage_for(int(ids[k])), s))
                             for k in range(m)])
        for w in atoms0:
            base = base + w * P[:m] / n
        for (alpha, w) in exps:
            base = base + w * S[alpha][:m] / n
        for (s0, w) in atoms_shifted:
            u = s - s0
            if u < 0:
                continue
            live = trace.alive_ids(u)
            if len(live) == 0:
                continue
            traits_u = trace.trait[live]
            extra = np.array([float(u_row(s, X[k], traits_u).sum())
                              for k in range(m)])
            base = base + w * extra / n
        return base

    # per-interval caches of g on the alive traits and their nudges
    gx = None
    gshift = None

    def refresh_g_cache(s: float) -> None:
        nonlocal gx, gshift
        Xm = X[:m]
        gx = f.g_at(s, Xm)
        if p > 0.0:
            flat = (Xm[:, None, :] + shifts[None, :, :]).reshape(m * K, d)
            gshift = f.g_at(s, flat).reshape(m, K)

    def tails(s: float):
        """int_s^T g for current traits and their nudges."""
        if not f.time_dependent:
            span = T - s
            return span * gx, (span * gshift if p > 0.0 else None)
        Xm = X[:m]
        tail0 = f.g_segment(s, T, Xm)
        tailK = None
        if p > 0.0:
            flat = (Xm[:, None, :] + shifts[None, :, :]).reshape(m * K, d)
            tailK = f.g_segment(s, T, flat).reshape(m, K)
        return tail0, tailK

    def integrand(s: float):
        if not dirac_rb:
            set_rates(0, m, s)
        tail0, tailK = tails(s)
        A0 = c_acc[:m] + tail0
        F = np.asarray(f.G(A0), dtype=float)
        if p > 0.0:
            GA = np.asarray(f.G(c_acc[:m, None] + tailK), dtype=float)
            Q = (1.0 - p) * F + p * (GA @ weights)
            Q2 = (1.0 - p) * F * F + p * ((GA * GA) @ weights)
        else:
            Q = F
            Q2 = F * F
        dv = d_vector(s)
        nr = n * r_vec[:m]
        I = float(np.sum(nr * (Q - F) + b_vec[:m] * Q - dv * F)) / n
        Bk = float(np.sum((nr + b_vec[:m]) * Q2 + (nr + dv) * F * F)) / (n * n)
        return I, Bk

    def mass_term(s: float) -> float:
        if fast:
            return float(Fva[:m].sum()) / n
        tail0, _ = tails(s)
        F = np.asarray(f.G(c_acc[:m] + tail0), dtype=float)
        return float(np.sum(F)) / n

    if not fast:
        refresh_g_cache(0.0)
    out_t = [0.0]
    out_M = [0.0]
    out_B = [0.0]
    mass0 = mass_term(0.0)
    comp = 0.0
    brk = 0.0

    def advance(a: float, b: float) -> None:
        if f.time_dependent:
            c_acc[:m] += f.g_segment(a, b, X[:m])
        else:
            c_acc[:m] += (b - a) * gx
        for alpha, _w in exps:
            decay = math.exp(-alpha * (b - a))
            S[alpha][:m] = S[alpha][:m] * decay + P[:m] * (1.0 - decay) / alpha

    for a, b_pt in zip(knots, knots[1:]):
        delta = b_pt - a
        if delta <= 0.0:
            continue
        if m > 0:
            mid = a + 0.5 * delta
            if fast:
                Fm = Fva[:m]
                if p > 0.0:
                    DT = T - mid
                    if ident:
                        q = A0a[:m] + DT * cw1a[:m]
                        q2 = Fm * Fm + 2.0 * DT * Fm * cw1a[:m] \
                            + DT * DT * cw2a[:m]
                    else:
                        GA = np.asarray(
                            f.G(A0a[:m, None]
                                + DT * (gsa[:m] - gxa[:m, None])), dtype=float)
                        q = GA @ weights
                        q2 = (GA * GA) @ weights
                    Qv = (1.0 - p) * Fm + p * q
                    Q2v = (1.0 - p) * Fm * Fm + p * q2
                else:
                    Qv = Fm
                    Q2v = Fm * Fm
                dv = const_D + uw * P[:m] / n if atoms0 else const_D
                nr = n * r_vec[:m]
                I_m = float(np.sum(nr * (Qv - Fm) + b_vec[:m] * Qv
                                   - dv * Fm)) / n
                B_m = float(np.sum((nr + b_vec[:m]) * Q2v
                                   + (nr + dv) * Fm * Fm)) / (n * n)
            else:
                advance(a, mid)
                I_m, B_m = integrand(mid)
                advance(mid, b_pt)
            comp += I_m * delta
            brk += B_m * delta
        k = ev_index.get(b_pt)
        if k is not None:
            if trace.ev_kind[k] == KIND_DEATH:
                i = int(trace.ev_subject[k])
                j = int(posn[i])
                if need_pairs and sym_u:
                    P[:m] -= u_row(b_pt, X[j], X[:m])
                last = m - 1
                for arr in (ids, c_acc, r_vec, b_vec, P):
                    arr[j] = arr[last]
                X[j] = X[last]
                if fast:
                    for arr in (A0a, gxa, Fva, cw1a, cw2a):
                        arr[j] = arr[last]
                    if gsa is not None:
                        gsa[j] = gsa[last]
                for alpha in S:
                    S[alpha][j] = S[alpha][last]
                posn[int(ids[j])] = j
                posn[i] = -1
                m -= 1
                lineages.pop(i, None)
                if need_pairs and not sym_u:
                    recompute_pairs(b_pt)
            else:
                child = int(trace.ev_child[k])
                par = int(trace.ev_subject[k])
                ensure(m + 1)
                ids[m] = child
                X[m] = trace.trait[child]
                c_acc[m] = c_acc[posn[par]]
                posn[child] = m
                if dirac_rb:
                    r_vec[m] = rs.r_of(X[m])
                    b_vec[m] = rs.b_of(X[m])
                if fast:
                    jp = int(posn[par])
                    fill_fast(m, b_pt, A0a[jp] - (T - b_pt) * gxa[jp])
                if need_pairs and sym_u:
                    # the newborn's row doubles as the increment of
                    # everyone else's pair sum
                    row = u_row(b_pt, X[m], X[:m + 1])
                    P[:m] += row[:m]
                    P[m] = float(row.sum())
                for alpha, _ in exps:
                    S[alpha][m] = newborn_discounted(alpha, X[m], b_pt)
                m += 1
                if need_pairs and not sym_u:
                    recompute_pairs(b_pt)
            if not fast:
                refresh_g_cache(b_pt)
        elif f.time_dependent and m > 0:
            refresh_g_cache(b_pt)
        out_t.append(b_pt)
        out_M.append((mass_term(b_pt) if m > 0 else 0.0) - mass0 - comp)
        out_B.append(brk)
    return MartingaleSeries(np.array(out_t), np.array(out_M), np.array(out_B))


# --- genealogy queries ------------------------------------------------------------

def sample_lineage(trace: Trace, t: float, rng: np.random.Generator) -> StepPath:
    """Lineage of a uniformly chosen individual alive at t, stopped at t."""
    live = trace.alive_ids(t)
    if len(live) == 0:
        raise EmptyPopulationError(f"nobody alive at t={t:.6g}")
    i = int(live[rng.integers(len(live))])
    return lineage_of(trace, i, t=t)


def _ancestor_chain(trace: Trace, i: int) -> list[int]:
    chain = [i]
    while trace.parent[chain[-1]] >= 0:
        chain.append(int(trace.parent[chain[-1]]))
    return chain


def mrca(trace: Trace, i: int, j: int) -> tuple[int, float]:
    """Most recent common ancestor node and the time the two ancestries
    diverge (the earlier birth of the two child branches; inf when i == j).
    Raises DisjointAncestryError for individuals from different founders."""
    for k in (i, j):
        if not 0 <= k < trace.node_count:
            raise ValueError(f"node {k} not in trace")
    chain_i = _ancestor_chain(trace, i)
    where_i = {node: pos for pos, node in enumerate(chain_i)}
    node = j
    prev_j = None
    while node not in where_i:
        prev_j = node
        par = int(trace.parent[node])
        if par < 0:
            raise DisjointAncestryError(
                f"nodes {i} and {j} descend from different founders")
        node = par
    pos = where_i[node]
    prev_i = chain_i[pos - 1] if pos > 0 else None
    cands = [float(trace.birth[c]) for c in (prev_i, prev_j) if c is not None]
    split = min(cands) if cands else math.inf
    return node, split


def family_count(trace: Trace, t: float, tau: float) -> int:
    """Number of distinct time-(t - tau) ancestors among those alive at t.
    tau = 0 counts the alive individuals themselves; the count is
    nonincreasing in tau."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    u = t - tau
    live = trace.alive_ids(t)
    reps = set()
    for v in live:
        node = int(v)
        while trace.birth[node] > u and trace.parent[node] >= 0:
            node = int(trace.parent[node])
        reps.add(node)
    return len(reps)
