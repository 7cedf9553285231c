from __future__ import annotations

import math

import numpy as np
import pytest

from conftest import random_step_path
from lineagesim.paths import (
    PathDomainError,
    PremiseNotSatisfied,
    check_concat_stability,
    concat,
    constant_path,
    skorokhod_distance,
    step_path,
    sup_distance,
)
from lineagesim.reference import skorokhod_bruteforce


class TestKnownValues:
    def test_constant_paths(self):
        d = skorokhod_distance(constant_path(0.3), constant_path(0.9), 1.0)
        assert math.isclose(d, 0.6, rel_tol=1e-15)

    def test_single_aligned_jump(self):
        # unit jumps at 1.0 vs 1.2 on [0, 2]: optimal map aligns them, cost
        # max(log(1.2/1.0), log(1.0/0.8)) = log(1.25)
        y = step_path([0.0, 1.0], [0.0, 1.0])
        z = step_path([0.0, 1.2], [0.0, 1.0])
        assert math.isclose(skorokhod_distance(y, z, 2.0), math.log(1.25),
                            rel_tol=1e-12)

    def test_alignment_beats_value_mismatch_only_when_cheaper(self):
        # tiny jump: better left unmatched than paying the slope
        y = step_path([0.0, 1.0], [0.0, 0.01])
        z = step_path([0.0, 1.2], [0.0, 0.01])
        assert math.isclose(skorokhod_distance(y, z, 2.0), 0.01, rel_tol=1e-12)

    def test_identical_paths(self):
        y = step_path([0.0, 0.3, 0.7], [0.0, 2.0, -1.0])
        assert skorokhod_distance(y, y, 1.0) == 0.0

    def test_jump_beyond_horizon_ignored(self):
        y = step_path([0.0, 3.0], [0.0, 9.0])
        assert skorokhod_distance(y, constant_path(0.0), 2.0) == 0.0

    def test_horizon_must_be_positive(self):
        with pytest.raises(PathDomainError):
            skorokhod_distance(constant_path(0.0), constant_path(0.0), 0.0)


class TestAgainstBruteForce:
    def test_matches_oracle_on_random_instances(self):
        rng = np.random.default_rng(20240817)
        for _ in range(40):
            T = float(rng.uniform(0.5, 2.5))
            y = random_step_path(rng, T, max_jumps=3)
            z = random_step_path(rng, T, max_jumps=3)
            dp = skorokhod_distance(y, z, T)
            bf = skorokhod_bruteforce(y, z, T, fill=2)
            assert abs(dp - bf) < 1e-6, (y, z, T, dp, bf)

    def test_matches_oracle_in_two_dimensions(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            T = 1.0
            y = random_step_path(rng, T, max_jumps=2, d=2)
            z = random_step_path(rng, T, max_jumps=2, d=2)
            dp = skorokhod_distance(y, z, T)
            bf = skorokhod_bruteforce(y, z, T, fill=2)
            assert abs(dp - bf) < 1e-6


class TestMetricProperties:
    def test_axioms_on_random_triples(self):
        rng = np.random.default_rng(99)
        T = 1.5
        for _ in range(30):
            y = random_step_path(rng, T)
            z = random_step_path(rng, T)
            w = random_step_path(rng, T)
            dyz = skorokhod_distance(y, z, T)
            dzy = skorokhod_distance(z, y, T)
            assert dyz == dzy  # exact symmetry
            assert dyz >= 0.0
            assert skorokhod_distance(y, y, T) == 0.0
            dyw = skorokhod_distance(y, w, T)
            dwz = skorokhod_distance(w, z, T)
            assert dyz <= dyw + dwz + 1e-9

    def test_bounded_by_sup_distance(self):
        rng = np.random.default_rng(5)
        T = 2.0
        for _ in range(30):
            y = random_step_path(rng, T)
            z = random_step_path(rng, T)
            assert skorokhod_distance(y, z, T) <= sup_distance(y, z, T) + 1e-12

    def test_positive_for_distinct_paths(self):
        y = step_path([0.0, 0.5], [0.0, 1.0])
        z = step_path([0.0, 0.5], [0.0, 1.5])
        assert skorokhod_distance(y, z, 1.0) > 0.0


class TestConcatStability:
    def test_holds_for_constant_heads(self):
        # y = z constant: the concatenation jumps align at slope cost <= eps
        y = constant_path(0.0)
        w = constant_path(4.0)
        s, r, T = 1.0, 1.05, 2.0
        eps = max(math.log(r / s), math.log((T - s) / (T - r))) + 1e-12
        assert check_concat_stability(y, y, w, s, r, eps, T) is True

    def test_premise_violation_is_distinct(self):
        y = constant_path(0.0)
        z = constant_path(10.0)  # far apart: d >= eps
        w = constant_path(4.0)
        with pytest.raises(PremiseNotSatisfied):
            check_concat_stability(y, z, w, 1.0, 1.01, 0.05, 2.0)
        with pytest.raises(PremiseNotSatisfied):
            # slope condition violated: r too far from s for this eps
            check_concat_stability(y, y, w, 0.2, 1.5, 0.05, 2.0)
        with pytest.raises(PremiseNotSatisfied):
            check_concat_stability(y, y, w, 0.0, 0.5, 0.05, 2.0)

    def test_conclusion_can_fail_for_jump_near_cut(self):
        # The 3-eps bound does not survive a head path that jumps just before
        # the cut: aligning both that jump and the concatenation jump squeezes
        # [0.9, s] onto [0.9, r], at log-slope log((r-0.9)/(s-0.9)), while the
        # premise only constrains log(r/s).  Documented actual behavior.
        y = step_path([0.0, 0.9], [0.0, 10.0])
        w = constant_path(100.0)
        s, r, T = 1.0, 1.05, 2.0
        eps = max(math.log(r / s), math.log((T - s) / (T - r))) + 1e-9
        d = skorokhod_distance(concat(y, s, w), concat(y, r, w), T)
        assert math.isclose(d, math.log((r - 0.9) / (s - 0.9)), rel_tol=1e-12)
        assert d > 3 * eps
        assert check_concat_stability(y, y, w, s, r, eps, T) is False
