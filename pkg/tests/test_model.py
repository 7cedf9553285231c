"""Memory kernels, bounded rates, mutation, and scenario parameterizations."""
import math

import numpy as np
import pytest
from scipy.integrate import quad

from lineagesim import step_path, constant_path
from lineagesim.model import (
    MemoryKernel, MutationKernel, RateSpec, ModelConfig, RateBoundError,
    memory_integral, birth_rate, death_rate, interaction_rate, scenario,
    ConstantRate, GaussianPeak, ConstantPathRate, ConstantCompetition,
    GaussianCompetition, GaussianDensityCompetition, KisdiCompetition,
    TanhShiftRate,
    DIRAC_AT_ZERO,
)


class FrozenHistory:
    """Minimal population history for rate tests: explicit lifetime rows."""

    def __init__(self, rows):
        # rows: (birth, death, trait) with death possibly inf
        self.birth = np.array([r[0] for r in rows], dtype=float)
        self.death = np.array([r[1] for r in rows], dtype=float)
        self.traits = np.array([[r[2]] for r in rows], dtype=float)

    def traits_alive_at(self, u):
        keep = (self.birth <= u) & (u < self.death)
        return self.traits[keep]

    def segments_until(self, t):
        keep = self.birth < t
        return (self.birth[keep], np.minimum(self.death[keep], t),
                self.traits[keep])


# --- memory kernels ---------------------------------------------------------

def test_memory_kernel_validation():
    with pytest.raises(ValueError):
        MemoryKernel(atoms=((-0.1, 1.0),))
    with pytest.raises(ValueError):
        MemoryKernel(atoms=((0.0, 0.0),))
    with pytest.raises(ValueError):
        MemoryKernel(exponentials=((0.0, 1.0),))
    with pytest.raises(ValueError):
        MemoryKernel(exponentials=((1.0, -2.0),))


def test_total_mass():
    assert DIRAC_AT_ZERO.total_mass(2.0) == 1.0
    k = MemoryKernel(atoms=((0.5, 2.0),))
    assert k.total_mass(0.4) == 0.0
    assert k.total_mass(0.5) == 2.0
    k = MemoryKernel(exponentials=((10.0, 1.0),))
    assert k.total_mass(2.0) == pytest.approx(0.09999999979388464, rel=1e-15)
    assert MemoryKernel().is_empty
    assert DIRAC_AT_ZERO.is_dirac_at_zero
    assert not MemoryKernel(atoms=((0.0, 2.0),)).is_dirac_at_zero


def test_memory_integral_dirac_reads_present():
    y = step_path([0.0, 0.4, 1.1], [1.0, -0.5, 2.0])
    for t in (0.0, 0.39, 0.4, 1.0, 1.5):
        assert memory_integral(DIRAC_AT_ZERO, y, t)[0] == y.at(t)[0]


def test_memory_integral_shifted_atom():
    y = step_path([0.0, 0.4], [1.0, -0.5])
    k = MemoryKernel(atoms=((0.25, 3.0),))
    # before the lag is reachable the atom contributes nothing
    assert memory_integral(k, y, 0.2)[0] == 0.0
    assert memory_integral(k, y, 0.5)[0] == 3.0 * 1.0   # reads y at 0.25
    assert memory_integral(k, y, 0.7)[0] == 3.0 * (-0.5)


def test_memory_integral_exponential_frozen():
    y = step_path([0.0, 0.4, 1.1], [1.0, -0.5, 2.0])
    k = MemoryKernel(exponentials=((3.0, 2.0),))
    assert memory_integral(k, y, 0.3)[0] == pytest.approx(
        0.39562022683960063, rel=1e-12)
    assert memory_integral(k, y, 0.75)[0] == pytest.approx(
        -0.05366173393008755, rel=1e-12)
    assert memory_integral(k, y, 1.6)[0] == pytest.approx(
        0.9832869575005628, rel=1e-12)


def test_memory_integral_matches_quadrature():
    rng = np.random.default_rng(20240818)
    k = MemoryKernel(atoms=((0.3, 0.7),), exponentials=((3.0, 2.0), (0.5, 1.0)))
    for _ in range(5):
        m = int(rng.integers(1, 5))
        times = np.concatenate([[0.0], np.sort(rng.uniform(0.05, 1.9, m - 1))])
        vals = rng.normal(size=m)
        y = step_path(times, vals)
        t = float(rng.uniform(0.2, 2.0))

        def integrand(s):
            return sum(w * math.exp(-a * s) for a, w in k.exponentials) * y.at(t - s)[0]

        expected, _ = quad(integrand, 0.0, t,
                           points=[t - tk for tk in times if tk <= t],
                           limit=200, epsabs=1e-13, epsrel=1e-13)
        for s0, w in k.atoms:
            if s0 <= t:
                expected += w * y.at(t - s0)[0]
        assert memory_integral(k, y, t)[0] == pytest.approx(expected, abs=1e-10)


def test_memory_integral_rejects_negative_time():
    with pytest.raises(ValueError):
        memory_integral(DIRAC_AT_ZERO, constant_path(1.0), -0.1)


# --- mutation ----------------------------------------------------------------

def test_mutation_kernel_validation():
    with pytest.raises(ValueError):
        MutationKernel(1.5, 1.0, 10)
    with pytest.raises(ValueError):
        MutationKernel(0.5, -0.5, 10)
    with pytest.raises(ValueError):
        MutationKernel(0.5, 1.0, 0)


def test_mutation_sample_law():
    rng = np.random.default_rng(7)
    never = MutationKernel(0.0, 1.0, 10)
    assert all(np.all(never.sample(rng) == 0.0) for _ in range(50))

    always = MutationKernel(1.0, 0.16, 100, 1)
    draws = np.array([always.sample(rng)[0] for _ in range(4000)])
    assert np.all(draws != 0.0)
    assert always.step_std == pytest.approx(math.sqrt(0.16 / 100))
    assert draws.std() == pytest.approx(always.step_std, rel=0.05)

    half = MutationKernel(0.5, 1.0, 10, 2)
    zeros = sum(np.all(half.sample(rng) == 0.0) for _ in range(4000))
    assert 1800 < zeros < 2200


# --- bounded rate evaluation ---------------------------------------------------

def _spec(**kw):
    base = dict(R=ConstantRate(1.0), B=ConstantRate(0.5),
                D=ConstantPathRate(0.0), U=ConstantCompetition(1.0),
                R_low=1.0, R_high=1.0, B_high=0.5, D_high=0.0, U_high=1.0)
    base.update(kw)
    return RateSpec(**base)


def test_rate_bounds_enforced():
    spec = _spec(R=ConstantRate(2.0))
    with pytest.raises(RateBoundError, match=r"R value 2.0 outside"):
        spec.r_of(np.zeros(1))
    spec = _spec(B=ConstantRate(-0.1))
    with pytest.raises(RateBoundError, match="B value"):
        spec.b_of(np.zeros(1))
    spec = _spec(D=ConstantPathRate(0.5))
    with pytest.raises(RateBoundError, match="D value"):
        spec.d_of(0.0, constant_path(0.0))
    spec = _spec(U=ConstantCompetition(2.0))
    with pytest.raises(RateBoundError, match="U value"):
        spec.u_of(0.0, constant_path(0.0), np.zeros((3, 1)))
    spec = _spec(U=ConstantCompetition(0.0))
    with pytest.raises(RateBoundError, match="U value"):
        spec.u_of(0.0, constant_path(0.0), np.zeros((3, 1)))


def test_rate_spec_validation():
    with pytest.raises(ValueError):
        _spec(R_low=0.0)
    with pytest.raises(ValueError):
        _spec(R_low=2.0)
    with pytest.raises(ValueError):
        _spec(B_high=-1.0)
    with pytest.raises(ValueError):
        _spec(U_low=0.0)


# --- rates on lineages ----------------------------------------------------------

def test_birth_rate_peak_value():
    # at the birth-peak trait the bonus is exactly 1, so the rate is n + 1
    cfg = scenario("dieckmann-doebeli")
    assert birth_rate(0.5, constant_path(2.0), cfg) == cfg.n + 1.0
    assert birth_rate(0.0, constant_path(1.5), cfg) == pytest.approx(
        cfg.n + 0.4578333617716143, rel=1e-15)


def test_death_rate_instantaneous_competition():
    cfg = scenario("dieckmann-doebeli", sigma_U=0.3)
    hist = FrozenHistory([(0.0, math.inf, 1.5), (0.0, math.inf, 2.0)])
    got = death_rate(0.5, constant_path(1.5), hist, cfg)
    # self term U=1 plus the cross term, averaged by n
    expected = cfg.n + (1.0 + 0.24935220877729622) / cfg.n
    assert got == pytest.approx(expected, rel=1e-14)


def test_interaction_exponential_memory_frozen():
    # two lifetimes integrated against an exponential memory kernel
    cfg = scenario("adler-goats")
    spec = _spec(U=GaussianCompetition(0.3, 1.0),
                 nu_d=MemoryKernel(exponentials=((2.0, 1.5),)))
    cfg = ModelConfig(dimension=1, n=10, horizon=2.0, rates=spec,
                      mutation=MutationKernel(1.0, 1.0, 10, 1),
                      initial_traits=np.zeros((1, 1)))
    hist = FrozenHistory([(0.0, 0.9, 0.2), (0.3, math.inf, -0.3)])
    got = interaction_rate(1.4, constant_path(0.0), hist, cfg)
    assert got == pytest.approx(0.05889053127489492, rel=1e-12)


def test_interaction_pruning_error_negligible():
    spec = _spec(U=ConstantCompetition(1.0),
                 nu_d=MemoryKernel(exponentials=((4.0, 1.0),)))
    rows = [(0.0, 0.5, 0.0)] + [(7.0 + i * 0.02, 7.1 + i * 0.02, 0.0)
                                for i in range(20)]
    cfg_exact = ModelConfig(dimension=1, n=5, horizon=20.0, rates=spec,
                            mutation=MutationKernel(1.0, 1.0, 5, 1),
                            initial_traits=np.zeros((1, 1)), prune_cutoff=0.0)
    cfg_pruned = ModelConfig(dimension=1, n=5, horizon=20.0, rates=spec,
                             mutation=MutationKernel(1.0, 1.0, 5, 1),
                             initial_traits=np.zeros((1, 1)), prune_cutoff=1e-12)
    hist = FrozenHistory(rows)
    # the first segment's decay factor at t sits just below the cutoff
    t = 7.7
    exact = interaction_rate(t, constant_path(0.0), hist, cfg_exact)
    pruned = interaction_rate(t, constant_path(0.0), hist, cfg_pruned)
    assert exact > 0
    # the t=0 segment decays below the cutoff and is dropped
    assert pruned != exact
    assert abs(pruned - exact) / exact < 1e-9


def test_empty_memory_kernel_means_no_competition():
    cfg = scenario("neutral")
    hist = FrozenHistory([(0.0, math.inf, 0.0)] * 5)
    assert interaction_rate(0.7, constant_path(0.0), hist, cfg) == 0.0


# --- competition kernels ----------------------------------------------------------

def test_gaussian_density_competition_peak():
    u = GaussianDensityCompetition(0.8, 50.0)
    got = u(0.0, constant_path(1.5), np.array([[1.5]]))
    assert got[0] == pytest.approx(0.008920620580763856, rel=1e-15)


def test_kisdi_competition_equal_traits():
    u = KisdiCompetition(capacity=50.0, a=2.0, c=1.0)
    got = u(0.0, constant_path(0.3), np.array([[0.3]]))
    assert got[0] == pytest.approx(2.0 * 2.0 / (50.0 * 3.0), rel=1e-15)
    # asymmetry: larger trait suppresses smaller more than vice versa
    low_on_high = u(0.0, constant_path(0.0), np.array([[1.0]]))[0]
    high_on_low = u(0.0, constant_path(1.0), np.array([[0.0]]))[0]
    assert high_on_low < low_on_high


# --- scenarios ----------------------------------------------------------------------

def test_scenario_unknown_name():
    with pytest.raises(ValueError, match="unknown scenario"):
        scenario("nope")


def test_scenario_parameters():
    dd = scenario("dieckmann-doebeli")
    assert dd.n == 300 and dd.dimension == 1
    assert dd.mutation.probability == 0.5
    assert dd.mutation.step_std == pytest.approx(0.4 / math.sqrt(300))
    assert dd.initial_traits.shape == (300, 1)
    assert np.all(dd.initial_traits == 1.5)
    assert dd.rates.nu_d.is_dirac_at_zero

    ag = scenario("adler-goats")
    assert ag.n == 50 and ag.initial_traits.shape == (100, 1)
    assert ag.rates.nu_d.exponentials == ((10.0, 1.0),)
    assert ag.mutation.probability == 1.0
    assert ag.rates.B(np.zeros(1)) == 0.75

    ne = scenario("neutral", gamma_bar=-0.5)
    assert ne.rates.nu_d.is_empty
    assert ne.rates.B(np.zeros(1)) == 0.0
    assert ne.rates.D(0.0, constant_path(0.0)) == 0.5

    lg = scenario("logistic", alpha=2.0, eta=0.25, n=80)
    assert lg.n == 80
    assert lg.rates.B(np.zeros(1)) == 2.0
    assert lg.rates.U(0.0, constant_path(0.0), np.zeros((4, 1))).tolist() == [0.25] * 4


def test_scenario_overrides():
    dd = scenario("dieckmann-doebeli", sigma_U=0.45, n=100, horizon=0.5)
    assert dd.rates.U.width == 0.45
    assert dd.n == 100 and dd.mutation.n == 100
    assert dd.horizon == 0.5


def test_model_config_validation():
    with pytest.raises(ValueError, match="dimension mismatch"):
        ModelConfig(dimension=2, n=10, horizon=1.0, rates=_spec(),
                    mutation=MutationKernel(0.5, 1.0, 10, 2),
                    initial_traits=np.zeros((3, 1)))
    with pytest.raises(ValueError, match="share n"):
        ModelConfig(dimension=1, n=10, horizon=1.0, rates=_spec(),
                    mutation=MutationKernel(0.5, 1.0, 20, 1),
                    initial_traits=np.zeros((3, 1)))


def test_tanh_shift_rate():
    f = TanhShiftRate(0.5, 0.5)
    assert f(np.array([0.3])) == pytest.approx(0.5 * math.tanh(0.3) + 0.5)
    assert f(np.array([0.1, 0.2])) == pytest.approx(0.5 * math.tanh(0.3) + 0.5)
    with pytest.raises(ValueError, match="negative"):
        TanhShiftRate(1.0, 0.5)


def test_mutation_kernel_degenerate_variance():
    k = MutationKernel(1.0, 0.0, 10)
    assert k.step_std == 0.0
    assert np.all(k.sample(np.random.default_rng(0)) == 0.0)
    with pytest.raises(ValueError, match="nonnegative"):
        MutationKernel(0.5, -1.0, 10)
