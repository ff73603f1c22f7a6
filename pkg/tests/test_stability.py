from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings

from matchq.model import ModelError, ModelParams, build_block
from matchq.stability import (
    GeneratorError,
    drift_generator_A,
    drift_generator_B,
    drift_rates_A,
    drift_rates_B,
    drift_table,
    is_stable,
    stationary_of_finite_generator,
)

from .test_model import model_params

P23 = ModelParams(1.0, 2.0, 1.0, 1.0, 2, 3)


def random_generator(rng, size):
    G = rng.random((size, size)) * (rng.random((size, size)) < 0.7)
    G += np.roll(np.eye(size), 1, axis=1) * 0.1  # keep it irreducible
    np.fill_diagonal(G, 0.0)
    np.fill_diagonal(G, -G.sum(axis=1))
    return G


class TestStationaryOfFiniteGenerator:
    def test_one_state(self):
        np.testing.assert_array_equal(stationary_of_finite_generator(np.zeros((1, 1))), [1.0])

    def test_symmetric_two_state(self):
        a = 3.7
        alpha = stationary_of_finite_generator(np.array([[-a, a], [a, -a]]))
        np.testing.assert_allclose(alpha, [0.5, 0.5], atol=1e-15)

    @pytest.mark.parametrize("seed", range(5))
    def test_random_six_state_matches_lstsq(self, seed):
        G = random_generator(np.random.default_rng(seed), 6)
        alpha = stationary_of_finite_generator(G)
        A = np.vstack([G.T, np.ones(6)])
        b = np.r_[np.zeros(6), 1.0]
        ref, *_ = np.linalg.lstsq(A, b, rcond=None)
        np.testing.assert_allclose(alpha, ref, atol=1e-12)
        assert np.abs(alpha @ G).max() <= 1e-12
        assert (alpha > 0).all()

    def test_rejects_reducible(self):
        G = np.array([[-1.0, 1.0, 0.0], [1.0, -1.0, 0.0], [0.0, 1.0, -1.0]])
        with pytest.raises(GeneratorError, match="reducible"):
            stationary_of_finite_generator(G)

    def test_rejects_non_conservative(self):
        with pytest.raises(GeneratorError, match="sum"):
            stationary_of_finite_generator(np.array([[-2.0, 1.0], [1.0, -1.0]]))


class TestDriftGenerators:
    @pytest.mark.parametrize("k", [1, 2, 6])
    def test_equals_block_row_sum(self, k):
        expected = sum(build_block(r, k, P23).entries for r in ("A0", "A1", "A2"))
        np.testing.assert_array_equal(drift_generator_A(k, P23), expected)
        np.testing.assert_allclose(drift_generator_A(k, P23).sum(axis=1), 0.0, atol=1e-12)

    def test_b_side_row_sums(self):
        np.testing.assert_allclose(drift_generator_B(-4, P23).sum(axis=1), 0.0, atol=1e-12)

    def test_single_phase_is_zero(self):
        p = ModelParams(1.0, 1.0, 1.0, 1.0, 1, 1)
        np.testing.assert_array_equal(drift_generator_A(3, p), np.zeros((1, 1)))

    def test_level_preconditions(self):
        with pytest.raises(ValueError):
            drift_generator_A(0, P23)
        with pytest.raises(ValueError):
            drift_generator_B(-1, P23)


class TestDriftRates:
    def test_up_rate_is_lambda1_times_last_block_mass(self):
        r = drift_rates_A(3, P23)
        assert math.isclose(r.up_rate, P23.lambda1 * r.alpha_or_beta[-P23.n:].sum(), rel_tol=1e-14)

    def test_b_up_rate_is_lambda2_times_first_block_mass(self):
        r = drift_rates_B(-3, P23)
        assert math.isclose(r.up_rate, P23.lambda2 * r.alpha_or_beta[:P23.m].sum(), rel_tol=1e-14)

    def test_down_rate_grows_without_bound(self):
        downs = [drift_rates_A(k, P23).down_rate for k in (1, 10, 100, 1000)]
        assert all(b > a for a, b in zip(downs, downs[1:]))
        assert downs[-1] > 1000 * P23.m * P23.theta1 * 0.5 / P23.n

    def test_report_vectors_are_distributions(self):
        for r in drift_table(P23, 6):
            assert r.up_rate >= 0 and r.down_rate >= 0
            assert (r.alpha_or_beta > 0).all()
            assert math.isclose(r.alpha_or_beta.sum(), 1.0, rel_tol=1e-13)

    def test_drift_table_levels(self):
        assert [r.level for r in drift_table(P23, 3)] == [-3, -2, 1, 2, 3]


class TestIsStable:
    def test_reference_parameters(self):
        report = is_stable(P23)
        assert report.stable and report.k_star <= 2
        assert report.positive.drifts_down and report.negative.drifts_down

    def test_tiny_impatience(self):
        assert is_stable(P23.replace(theta1=1e-3, theta2=1e-3)).stable

    def test_zero_impatience_rejected(self):
        with pytest.raises(ModelError):
            P23.replace(theta1=0.0)

    @settings(max_examples=20, deadline=None)
    @given(p=model_params(max_size=3))
    def test_drift_beyond_threshold(self, p):
        k0 = math.ceil(max(1.0, p.lambda1 / (p.m * p.theta1))) + 1
        l0 = -math.ceil(max(1.0, p.lambda2 / (p.n * p.theta2))) - 1
        for k in range(k0, k0 + 15):
            assert drift_rates_A(k, p).drifts_down
        for l in range(l0, l0 - 15, -1):
            assert drift_rates_B(l, p).drifts_down
