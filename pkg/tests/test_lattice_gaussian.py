"""Tests for discrete normal masses, sampling and support enumeration."""

import math

import numpy as np
import pytest
from pydantic import ValidationError
from scipy.stats import multivariate_normal

from dn_stein.errors import DomainError
from dn_stein.lattice_gaussian import (
    box_masses,
    box_probability,
    dn_pmf,
    dn_pmf_table,
    dn_sample,
    lattice_ball,
    marginal,
    support_radius,
)
from dn_stein.models import DnParams, LatticeBox
from dn_stein.numerics import make_rng

STANDARD_CELL = 0.38292492254802624


def random_params(rng, d, scale=1.0):
    """A well-conditioned random DN parameter set."""
    generator = rng.generator
    a = generator.normal(size=(d, d))
    cov = scale * (a @ a.T / d + np.diag(generator.uniform(0.3, 1.0, size=d)))
    return DnParams.from_arrays(generator.uniform(-3, 3, size=d), cov)


@pytest.fixture
def standard_1d():
    """N(0, 1) parameters."""
    return DnParams.from_arrays([0.0], [[1.0]])


@pytest.fixture
def correlated_2d():
    """A correlated bivariate parameter set."""
    return DnParams.from_arrays([0.3, -1.2], [[2.0, 0.9], [0.9, 1.5]])


class TestDnParams:
    """Test cases for parameter validation."""

    def test_singular_covariance_rejected(self):
        """Test a singular V is refused with a hint to drop a coordinate."""
        with pytest.raises(ValidationError, match="drop a coordinate"):
            DnParams.from_arrays([0.0, 0.0], [[1.0, 1.0], [1.0, 1.0]])

    def test_asymmetric_covariance_rejected(self):
        """Test an asymmetric V is refused."""
        with pytest.raises(ValidationError, match="symmetric"):
            DnParams.from_arrays([0.0, 0.0], [[1.0, 0.2], [0.1, 1.0]])

    def test_shape_mismatch_rejected(self):
        """Test mu and V must agree in dimension."""
        with pytest.raises(ValidationError, match="shape"):
            DnParams.from_arrays([0.0, 0.0], [[1.0]])


class TestBoxProbability:
    """Test cases for Gaussian box masses."""

    def test_standard_unit_cell(self, standard_1d):
        """Test the N(0,1) mass of [-1/2, 1/2]."""
        assert dn_pmf(standard_1d, [0]) == pytest.approx(STANDARD_CELL, abs=1e-15)

    def test_far_tail_cell_positive(self, standard_1d):
        """Test a cell 30 sd out keeps a positive, tiny mass."""
        mass = dn_pmf(standard_1d, [30])

        assert 0.0 < mass < 1e-190

    def test_independent_bivariate_factorizes(self):
        """Test a diagonal V gives the product of the marginal masses."""
        params = DnParams.from_arrays([0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]])

        assert dn_pmf(params, [0, 0]) == pytest.approx(STANDARD_CELL**2, abs=1e-14)

    def test_box_probability_matches_pmf(self, correlated_2d):
        """Test the unit cell box agrees with dn_pmf."""
        box = LatticeBox.unit_cell([1, -1])

        assert box_probability(correlated_2d, box) == dn_pmf(correlated_2d, [1, -1])

    def test_dimension_mismatch(self, correlated_2d):
        """Test a box of the wrong dimension is rejected."""
        with pytest.raises(DomainError, match="dimension"):
            box_probability(correlated_2d, LatticeBox.unit_cell([0]))

    def test_empty_box_rejected(self, standard_1d):
        """Test lower >= upper is a domain error."""
        with pytest.raises(DomainError):
            box_masses(standard_1d, np.array([[1.0]]), np.array([[1.0]]))

    def test_bivariate_matches_qmc(self):
        """Test the deterministic bivariate path against QMC within its error.

        The QMC standard error comes from 16 randomizations, so each
        comparison is a t-test with 15 degrees of freedom; over 100 cases a
        3 SE band would be expected to fail somewhere, hence 5 SE.
        """
        rng = make_rng(2024)
        for case in range(100):
            params = random_params(rng.derive(case), 2)
            offset = rng.derive(case, 1).generator.integers(-2, 3, 2)
            point = np.round(params.mean).astype(int) + offset
            lower = (point - 0.5)[None, :]
            upper = (point + 0.5)[None, :]
            exact, _ = box_masses(params, lower, upper)
            qmc, se = box_masses(
                params, lower, upper, tol=1e-6, rng=rng.derive(case, 2), method="qmc"
            )

            assert abs(exact[0] - qmc[0]) <= 5 * se[0] + 1e-12

    @pytest.mark.parametrize("rho", [-0.8, -0.3, 0.45, 0.9])
    def test_bivariate_lower_orthants(self, rho):
        """Test lower-orthant masses against scipy's bivariate normal CDF.

        The grid includes standardized corners on the axes.
        """
        mean = np.array([0.4, -1.1])
        scale = np.array([1.5, 0.8])
        cov = np.outer(scale, scale) * np.array([[1.0, rho], [rho, 1.0]])
        params = DnParams.from_arrays(mean, cov)
        z = np.array([-2.0, -0.5, 0.0, 0.7, 2.5])
        corners = np.array([[a, b] for a in z for b in z]) * scale + mean
        lower = np.full_like(corners, -1e3)

        masses, errors = box_masses(params, lower, corners)
        expected = multivariate_normal(mean, cov).cdf(corners)

        np.testing.assert_allclose(masses, expected, atol=2e-5)
        np.testing.assert_array_equal(errors, 0.0)

    @pytest.mark.parametrize("rho", [-0.6, 0.0, 0.5])
    def test_bivariate_quadrant_at_mean(self, rho):
        """Test the quadrant below the mean has mass 1/4 + asin(rho) / (2 pi)."""
        mean = np.array([1.0, 2.0])
        cov = np.array([[2.0, rho * 2.0], [rho * 2.0, 2.0]])
        params = DnParams.from_arrays(mean, cov)

        masses, _ = box_masses(params, np.full((1, 2), -1e3), mean[None, :])
        expected = 0.25 + math.asin(rho) / (2 * math.pi)

        assert masses[0] == pytest.approx(expected, abs=1e-12)


class TestNormalization:
    """Test cases for total DN mass over the support ball."""

    @pytest.mark.parametrize("d", [1, 2, 3, 4])
    def test_mass_over_ball(self, d):
        """Test five random parameter sets per dimension carry mass in [1 - 2e-9, 1].

        Shared QMC points make the cell integrands of a whole lattice sum to one
        at every point, so the d >= 3 totals only carry the tail error.
        """
        rng = make_rng(99)
        scale = 1.0 if d <= 2 else 0.25
        for case in range(5):
            params = random_params(rng.derive(d, case), d, scale)
            points = lattice_ball(params, 1e-9)
            masses, _ = dn_pmf_table(
                params, points, tol=1e-4, rng=rng.derive(d, case, 1)
            )
            total = masses.sum()

            assert 1.0 - 2e-9 <= total <= 1.0 + 1e-12


class TestSampling:
    """Test cases for dn_sample."""

    def test_single_draw_shape(self, correlated_2d):
        """Test a single draw is an integer vector."""
        z = dn_sample(correlated_2d, make_rng(1))

        assert z.shape == (2,)
        assert z.dtype == np.int64

    def test_cell_frequency_matches_pmf(self, standard_1d):
        """Test the frequency of 0 matches the cell mass."""
        draws = dn_sample(standard_1d, make_rng(3), size=200_000)
        frequency = np.mean(draws[:, 0] == 0)
        se = np.sqrt(STANDARD_CELL * (1 - STANDARD_CELL) / len(draws))

        assert abs(frequency - STANDARD_CELL) <= 4 * se

    def test_deterministic_given_stream(self, correlated_2d):
        """Test equal streams give equal draws."""
        a = dn_sample(correlated_2d, make_rng(8), size=10)
        b = dn_sample(correlated_2d, make_rng(8), size=10)

        np.testing.assert_array_equal(a, b)


class TestSupport:
    """Test cases for support_radius, lattice_ball and marginal."""

    def test_radius_standard_normal(self, standard_1d):
        """Test the two-sided 5% radius of N(0,1)."""
        assert support_radius(standard_1d, 0.05) == pytest.approx(1.959963984540054, rel=1e-12)

    def test_radius_trivial_epsilon(self, standard_1d):
        """Test epsilon >= 1 needs no support."""
        assert support_radius(standard_1d, 1.0) == 0.0

    def test_radius_requires_positive_epsilon(self, standard_1d):
        """Test epsilon must be positive."""
        with pytest.raises(DomainError):
            support_radius(standard_1d, 0.0)

    def test_ball_sorted_and_centred(self, correlated_2d):
        """Test the ball is lexicographic, unique and contains the rounded mean."""
        ball = lattice_ball(correlated_2d, 1e-6)
        as_tuples = [tuple(p) for p in ball]

        assert as_tuples == sorted(set(as_tuples))
        assert tuple(np.floor(correlated_2d.mean + 0.5).astype(int)) in set(as_tuples)

    def test_marginal(self, correlated_2d):
        """Test the projection keeps the selected mean and covariance block."""
        projected = marginal(correlated_2d, [1])

        assert projected.mu == [-1.2]
        assert projected.sigma == [[1.5]]

    def test_marginal_bad_index(self, correlated_2d):
        """Test out-of-range indices are rejected."""
        with pytest.raises(DomainError):
            marginal(correlated_2d, [2])
