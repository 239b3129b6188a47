"""Closed-form 1D optimal transport against exact LP and coupling oracles."""

import numpy as np
import pytest

from otpitch.errors import (
    DegenerateInputError,
    DomainError,
    ShiftOutOfRangeError,
    SizeError,
)
from otpitch.ot_core import (
    DiscreteDistribution,
    cdf,
    grid_wasserstein,
    lp_ot_oracle,
    monotone_plan,
    normalize,
    quantile,
    translate,
    wasserstein_distance,
    wasserstein_grad,
    wasserstein_p,
)

from conftest import random_simplex, tangent


def cost_matrix(mu, nu, p):
    return np.abs(mu.positions[:, None] - nu.positions[None, :]) ** p


def random_dist(rng, n, span=10.0):
    positions = np.sort(rng.uniform(0.0, span, size=n))
    while np.any(np.diff(positions) <= 0):
        positions = np.sort(rng.uniform(0.0, span, size=n))
    return DiscreteDistribution(positions, random_simplex(rng, n))


class TestNormalize:
    def test_proportional(self):
        np.testing.assert_allclose(normalize([2, 2]), [0.5, 0.5])

    def test_identity_on_simplex(self):
        np.testing.assert_allclose(normalize([1, 0, 0]), [1, 0, 0])

    def test_all_zero_rejected(self):
        with pytest.raises(DegenerateInputError):
            normalize([0, 0])

    def test_negative_rejected(self):
        with pytest.raises(DegenerateInputError):
            normalize([0.5, -0.1])


class TestCdfQuantile:
    dist = DiscreteDistribution(np.array([1.0, 4.0]), np.array([0.25, 0.75]))

    def test_cdf_between_atoms(self):
        assert cdf(self.dist, 2.0) == 0.25

    def test_cdf_below_support(self):
        assert cdf(self.dist, 0.0) == 0.0

    def test_cdf_full_support(self):
        assert cdf(self.dist, 4.0) == 1.0

    def test_quantile_first_atom(self):
        assert quantile(self.dist, 0.2) == 1.0

    def test_quantile_second_atom(self):
        assert quantile(self.dist, 0.5) == 4.0

    def test_quantile_full_mass(self):
        assert quantile(self.dist, 1.0) == 4.0

    @pytest.mark.parametrize("r", [0.0, -0.5, 1.5])
    def test_quantile_domain(self, r):
        with pytest.raises(DomainError):
            quantile(self.dist, r)

    def test_galois_connection(self, rng):
        for _ in range(20):
            dist = random_dist(rng, int(rng.integers(2, 9)))
            for r in rng.uniform(1e-6, 1.0, size=10):
                assert cdf(dist, quantile(dist, r)) >= r - 1e-12
            for p_i in dist.positions:
                assert quantile(dist, cdf(dist, p_i)) <= p_i + 1e-12


class TestWassersteinCost:
    def test_identity_of_indiscernibles(self, rng):
        dist = random_dist(rng, 6)
        assert wasserstein_p(dist, dist, 2.0) == 0.0

    def test_dirac_pair(self):
        mu = DiscreteDistribution(np.array([3.0]), np.array([1.0]))
        nu = DiscreteDistribution(np.array([8.0]), np.array([1.0]))
        assert wasserstein_p(mu, nu, 2.0) == pytest.approx(25.0, abs=1e-12)
        assert wasserstein_distance(mu, nu, 2.0) == pytest.approx(5.0, abs=1e-12)

    def test_two_atoms_vs_dirac(self):
        mu = DiscreteDistribution(np.array([0.0, 1.0]), np.array([0.5, 0.5]))
        nu = DiscreteDistribution(np.array([2.0]), np.array([1.0]))
        assert wasserstein_p(mu, nu, 2.0) == pytest.approx(2.5, abs=1e-12)

    @pytest.mark.parametrize("p", [0.5, 0.0, -1.0, float("nan")])
    def test_invalid_order(self, p):
        mu = DiscreteDistribution(np.array([0.0]), np.array([1.0]))
        with pytest.raises(DomainError):
            wasserstein_p(mu, mu, p)

    def test_symmetry_exact(self, rng):
        for _ in range(100):
            mu = random_dist(rng, int(rng.integers(1, 9)))
            nu = random_dist(rng, int(rng.integers(1, 9)))
            p = float(rng.choice([1.0, 2.0, 3.0]))
            assert wasserstein_p(mu, nu, p) == wasserstein_p(nu, mu, p)

    def test_matches_lp_oracle(self, rng):
        for _ in range(50):
            mu = random_dist(rng, int(rng.integers(1, 9)))
            nu = random_dist(rng, int(rng.integers(1, 9)))
            for p in (1.0, 2.0):
                plan = lp_ot_oracle(mu, nu, cost_matrix(mu, nu, p))
                assert wasserstein_p(mu, nu, p) == pytest.approx(
                    plan.cost, abs=1e-6)

    def test_monotone_coupling_matches_lp(self, rng):
        for _ in range(50):
            mu = random_dist(rng, int(rng.integers(1, 9)))
            nu = random_dist(rng, int(rng.integers(1, 9)))
            for p in (1.0, 2.0):
                c = cost_matrix(mu, nu, p)
                lp = lp_ot_oracle(mu, nu, c)
                nw = monotone_plan(mu, nu, c)
                nw.check_marginals(mu, nu)
                assert nw.cost == pytest.approx(lp.cost, abs=1e-8)


class TestLpOracle:
    def test_dirac_to_dirac(self):
        mu = DiscreteDistribution(np.array([3.0]), np.array([1.0]))
        nu = DiscreteDistribution(np.array([8.0]), np.array([1.0]))
        plan = lp_ot_oracle(mu, nu, cost_matrix(mu, nu, 2.0))
        np.testing.assert_allclose(plan.matrix, [[1.0]], atol=1e-9)
        assert plan.cost == pytest.approx(25.0, abs=1e-9)

    def test_identical_atoms_zero_cost(self, rng):
        dist = random_dist(rng, 5)
        plan = lp_ot_oracle(dist, dist, cost_matrix(dist, dist, 2.0))
        assert plan.cost == pytest.approx(0.0, abs=1e-9)
        np.testing.assert_allclose(plan.matrix, np.diag(dist.weights), atol=1e-8)

    def test_instance_size_limit(self, rng):
        mu = random_dist(rng, 9)
        nu = random_dist(rng, 9)
        with pytest.raises(SizeError):
            lp_ot_oracle(mu, nu, cost_matrix(mu, nu, 2.0))


class TestGradient:
    def test_equal_inputs_zero_in_tangent(self, rng):
        dist = random_dist(rng, 6)
        ga, gb = wasserstein_grad(dist, dist, 2.0)
        assert np.max(np.abs(tangent(ga))) < 1e-12
        assert np.max(np.abs(tangent(gb))) < 1e-12

    def test_dirac_pair_degenerate_tangent(self):
        mu = DiscreteDistribution(np.array([3.0]), np.array([1.0]))
        nu = DiscreteDistribution(np.array([8.0]), np.array([1.0]))
        ga, gb = wasserstein_grad(mu, nu, 2.0)
        assert tangent(ga) == pytest.approx(0.0)
        assert tangent(gb) == pytest.approx(0.0)

    def test_matches_pairwise_finite_differences(self, rng):
        # Directional derivatives along e_i - e_j stay on the simplex, so
        # the public validated entry point can evaluate both probe points.
        eps = 1e-6
        for _ in range(20):
            mu = random_dist(rng, 5)
            nu = random_dist(rng, 5)
            ga, gb = wasserstein_grad(mu, nu, 2.0)
            for i in range(1, 5):
                probe_up = mu.weights.copy()
                probe_up[i] += eps
                probe_up[0] -= eps
                probe_dn = mu.weights.copy()
                probe_dn[i] -= eps
                probe_dn[0] += eps
                up = wasserstein_p(
                    DiscreteDistribution(mu.positions, probe_up), nu, 2.0)
                dn = wasserstein_p(
                    DiscreteDistribution(mu.positions, probe_dn), nu, 2.0)
                numeric = (up - dn) / (2 * eps)
                analytic = ga[i] - ga[0]
                assert abs(analytic - numeric) < 1e-4 * (1 + abs(numeric))


class TestTranslate:
    def test_pad_then_shift(self):
        np.testing.assert_array_equal(
            translate([0, 1, 0], 1, 2), [0, 0, 0, 0, 1, 0, 0])

    def test_identity_shift(self, rng):
        y = random_simplex(rng, 5)
        np.testing.assert_array_equal(
            translate(y, 0, 3), np.concatenate([np.zeros(3), y, np.zeros(3)]))

    def test_group_inverse(self, rng):
        y = random_simplex(rng, 5)
        padded = translate(y, 0, 3)
        np.testing.assert_array_equal(np.roll(translate(y, 2, 3), -2), padded)

    def test_shift_out_of_range(self):
        with pytest.raises(ShiftOutOfRangeError):
            translate([1.0], 3, 2)


class TestGridProperties:
    def test_translation_linearity(self, rng):
        k_max = 24
        for _ in range(20):
            y = np.zeros(256)
            support = rng.choice(np.arange(k_max, 256 - k_max), size=5,
                                 replace=False)
            y[support] = random_simplex(rng, 5)
            k = int(rng.integers(-k_max, k_max + 1))
            cost = grid_wasserstein(translate(y, 0, k_max),
                                    translate(y, k, k_max), p=2.0)
            assert abs(np.sqrt(cost) - abs(k)) < 1e-9

    def test_shift_invariance(self, rng):
        k_max = 24
        for _ in range(20):
            y1 = np.zeros(256)
            y2 = np.zeros(256)
            interior = np.arange(k_max, 256 - k_max)
            y1[rng.choice(interior, size=4, replace=False)] = random_simplex(rng, 4)
            y2[rng.choice(interior, size=4, replace=False)] = random_simplex(rng, 4)
            k = int(rng.integers(-k_max, k_max + 1))
            for p in (1.0, 2.0):
                base = grid_wasserstein(translate(y1, 0, k_max),
                                        translate(y2, 0, k_max), p=p)
                shifted = grid_wasserstein(translate(y1, k, k_max),
                                           translate(y2, k, k_max), p=p)
                assert abs(base - shifted) < 1e-9


class TestDistributionValidation:
    def test_tiny_negative_clamped(self):
        dist = DiscreteDistribution(np.array([0.0, 1.0]),
                                    np.array([1.0 + 5e-13, -5e-13]))
        assert dist.weights[1] == 0.0
        assert dist.weights.sum() == pytest.approx(1.0, abs=1e-15)

    def test_non_simplex_rejected(self):
        with pytest.raises(DomainError):
            DiscreteDistribution(np.array([0.0]), np.array([0.5]))

    def test_unsorted_positions_rejected(self):
        with pytest.raises(DomainError):
            DiscreteDistribution(np.array([1.0, 0.0]), np.array([0.5, 0.5]))
