"""Tests for lattice tables and total variation distances."""

import math

import numpy as np
import pytest
from scipy.special import ndtr
from scipy.stats import binom

from dn_stein.errors import DomainError
from dn_stein.lattice_gaussian import dn_pmf, dn_sample
from dn_stein.models import DnParams
from dn_stein.numerics import make_rng
from dn_stein.tv_distance import (
    PmfTable,
    dn_table,
    tv_empirical_vs_dn,
    tv_exact_vs_dn,
    tv_tables,
    tv_tables_upper,
)


@pytest.fixture
def standard_1d():
    """N(0, 1) parameters."""
    return DnParams.from_arrays([0.0], [[1.0]])


class TestPmfTable:
    """Test cases for PmfTable."""

    def test_merges_repeated_points(self):
        """Test repeated points are summed."""
        table = PmfTable(np.array([[1], [0], [1]]), np.array([0.25, 0.5, 0.25]))

        assert len(table) == 2
        assert table.prob([1]) == 0.5
        assert table.prob([7]) == 0.0

    def test_negative_probability_rejected(self):
        """Test negative entries are refused."""
        with pytest.raises(DomainError, match="non-negative"):
            PmfTable(np.array([[0], [1]]), np.array([1.2, -0.2]))

    def test_excess_mass_rejected(self):
        """Test mass above one is refused."""
        with pytest.raises(DomainError, match="exceeds 1"):
            PmfTable(np.array([[0], [1]]), np.array([0.6, 0.6]))

    def test_tail_mass(self):
        """Test missing mass is reported as tail."""
        table = PmfTable.from_mapping({(0,): 0.5, (1,): 0.25})

        assert table.tail_mass == pytest.approx(0.25)

    def test_from_samples(self):
        """Test the empirical table of a sample array."""
        table = PmfTable.from_samples(np.array([[0, 1], [0, 1], [2, 2], [0, 1]]))

        assert table.to_dict() == {(0, 1): 0.75, (2, 2): 0.25}

    def test_moments(self):
        """Test mean and covariance of a two-point table."""
        table = PmfTable.from_mapping({(0,): 0.5, (2,): 0.5})

        np.testing.assert_allclose(table.mean(), [1.0])
        np.testing.assert_allclose(table.covariance(), [[1.0]])

    def test_marginal_and_shift(self):
        """Test marginalization sums out coordinates and shifts move points."""
        table = PmfTable.from_mapping({(0, 0): 0.5, (0, 1): 0.3, (1, 1): 0.2})

        assert table.marginal([0]).to_dict() == {(0,): 0.8, (1,): 0.2}
        assert table.shift([1, 0]).prob([1, 1]) == 0.3


class TestTvTables:
    """Test cases for tv_tables."""

    def test_identical_tables(self):
        """Test TV of a table with itself is zero."""
        table = PmfTable.from_mapping({(0,): 0.3, (1,): 0.7})

        assert tv_tables(table, table) == 0.0

    def test_disjoint_tables(self):
        """Test disjoint supports give TV one."""
        assert tv_tables(PmfTable.point_mass([0]), PmfTable.point_mass([1])) == 1.0

    def test_overlapping_tables(self):
        """Test half-overlapping uniform tables."""
        p = PmfTable.from_mapping({(0,): 0.5, (1,): 0.5})
        q = PmfTable.from_mapping({(1,): 0.5, (2,): 0.5})

        assert tv_tables(p, q) == pytest.approx(0.5)

    def test_symmetric(self):
        """Test TV is symmetric."""
        p = PmfTable.from_mapping({(0, 0): 0.2, (1, 0): 0.8})
        q = PmfTable.from_mapping({(0, 0): 0.6, (0, 1): 0.4})

        assert tv_tables(p, q) == tv_tables(q, p)

    def test_upper_adds_tails(self):
        """Test tv_tables_upper adds half of both tails and caps at one."""
        p = PmfTable.from_mapping({(0,): 0.9})
        q = PmfTable.from_mapping({(0,): 0.8})

        assert tv_tables_upper(p, q) == pytest.approx(0.05 + 0.15)

    def test_dimension_mismatch(self):
        """Test tables of different dimension are rejected."""
        with pytest.raises(DomainError, match="dimension"):
            tv_tables(PmfTable.point_mass([0]), PmfTable.point_mass([0, 0]))

    def test_triangle_inequality(self):
        """Test tv(p, r) <= tv(p, q) + tv(q, r) on random table triples."""
        generator = make_rng(41).generator
        for _ in range(200):
            tables = []
            for _ in range(3):
                size = int(generator.integers(1, 8))
                points = generator.integers(-4, 5, size=(size, 2))
                tables.append(PmfTable(points, generator.dirichlet(np.ones(size))))
            p, q, r = tables

            assert tv_tables(p, r) <= tv_tables(p, q) + tv_tables(q, r) + 1e-12


class TestTvVsDn:
    """Test cases for TV to a discrete normal."""

    def test_point_mass_exact(self, standard_1d):
        """Test TV(delta_0, DN_1(0, 1)) = 1 - DN(0)."""
        estimate = tv_exact_vs_dn(PmfTable.point_mass([0]), standard_1d, 1e-9)

        assert estimate.value == pytest.approx(1.0 - dn_pmf(standard_1d, [0]), abs=1e-9)
        assert estimate.mc_std_error == 0.0
        assert estimate.tail_bound == pytest.approx(1e-9)

    def test_dn_table_against_itself(self, standard_1d):
        """Test a DN table complete to 1e-13 is at distance zero from DN."""
        table = dn_table(standard_1d, 1e-13)
        estimate = tv_exact_vs_dn(table, standard_1d, 1e-9)

        assert table.tail_mass <= 1e-12
        assert estimate.value <= 1e-12

    def test_exact_requires_complete_table(self, standard_1d):
        """Test a table missing mass beyond rounding is rejected."""
        with pytest.raises(DomainError, match="not exact"):
            tv_exact_vs_dn(PmfTable.from_mapping({(0,): 0.5}), standard_1d, 1e-9)

    def test_exact_deficit_below_tail_level_rejected(self, standard_1d):
        """Test a deficit smaller than epsilon_tail but above 1e-12 is still rejected."""
        table = PmfTable.from_mapping({(0,): 0.5, (1,): 0.5 - 1e-10})

        with pytest.raises(DomainError, match="not exact"):
            tv_exact_vs_dn(table, standard_1d, 1e-9)

    def test_binomial_against_dn(self):
        """Test Binomial(20, 1/2) against DN_1(10, 5) by direct summation."""
        k = np.arange(21)
        table = PmfTable(k[:, None], binom.pmf(k, 20, 0.5))
        params = DnParams.from_arrays([10.0], [[5.0]])
        sd = math.sqrt(5.0)
        cells = ndtr((k + 0.5 - 10.0) / sd) - ndtr((k - 0.5 - 10.0) / sd)
        outside = ndtr(-10.5 / sd) + ndtr((10.0 - 20.5) / sd)
        expected = 0.5 * (np.abs(binom.pmf(k, 20, 0.5) - cells).sum() + outside)

        estimate = tv_exact_vs_dn(table, params, 1e-9)

        assert 0.0 < estimate.value < 0.1
        assert estimate.value == pytest.approx(expected, abs=1e-10)

    def test_empirical_small_for_dn_samples(self):
        """Test samples from DN are close to DN in TV."""
        params = DnParams.from_arrays([2.0], [[4.0]])
        samples = dn_sample(params, make_rng(12), size=20_000)
        estimate = tv_empirical_vs_dn(samples, params, n_bootstrap=50, rng=make_rng(13))

        assert estimate.value < 0.05
        assert estimate.mc_std_error > 0.0
        assert estimate.lower <= estimate.value <= estimate.upper

    def test_empirical_decreases_with_sample_count(self):
        """Test the plug-in TV of DN's own samples shrinks as the sample grows."""
        params = DnParams.from_arrays([0.0], [[25.0]])
        medians = []
        for count in (1_000, 10_000, 100_000, 1_000_000):
            values = [
                tv_empirical_vs_dn(
                    dn_sample(params, make_rng(100 + seed), size=count),
                    params,
                    n_bootstrap=2,
                    rng=make_rng(200 + seed),
                ).value
                for seed in range(10)
            ]
            medians.append(float(np.median(values)))

        assert medians[0] > medians[1] > medians[2] > medians[3]
        assert medians[3] <= 0.01

    def test_bootstrap_error_covers_deviation(self):
        """Test two bootstrap errors cover the distance to the exact TV in 90% of trials."""
        source = DnParams.from_arrays([0.0], [[25.0]])
        target = DnParams.from_arrays([2.0], [[25.0]])
        exact = tv_exact_vs_dn(dn_table(source, 1e-13), target, 1e-9).value
        covered = 0
        for trial in range(100):
            samples = dn_sample(source, make_rng(300 + trial), size=20_000)
            estimate = tv_empirical_vs_dn(
                samples, target, n_bootstrap=100, rng=make_rng(400 + trial)
            )
            covered += abs(estimate.value - exact) <= 2 * estimate.mc_std_error

        assert covered >= 90

    def test_empirical_reproducible(self, standard_1d):
        """Test equal streams give equal estimates."""
        samples = dn_sample(standard_1d, make_rng(4), size=2000)
        a = tv_empirical_vs_dn(samples, standard_1d, n_bootstrap=20, rng=make_rng(9))
        b = tv_empirical_vs_dn(samples, standard_1d, n_bootstrap=20, rng=make_rng(9))

        assert a == b

    def test_empirical_needs_samples(self, standard_1d):
        """Test fewer than 1000 samples are rejected."""
        with pytest.raises(DomainError, match="at least 1000"):
            tv_empirical_vs_dn(np.zeros((999, 1), dtype=int), standard_1d)

    def test_empirical_dimension_mismatch(self, standard_1d):
        """Test samples must match the DN dimension."""
        with pytest.raises(DomainError, match="dimension"):
            tv_empirical_vs_dn(np.zeros((1000, 2), dtype=int), standard_1d)
