"""Tests for convergence experiments and report output."""

import math

import numpy as np
import pytest

from dn_stein.errors import DomainError
from dn_stein.harness import (
    CSV_HEADER,
    draw_replicates,
    emit_report,
    fit_decay_slope,
    report_to_csv,
    run_convergence_experiment,
)
from dn_stein.lattice_gaussian import dn_pmf
from dn_stein.models import (
    ColoringModel,
    ConstantModel,
    ConvergenceReport,
    DnParams,
    ExperimentConfig,
    MarkovModel,
    RggModel,
)
from dn_stein.numerics import make_rng
from dn_stein.services import create_service


@pytest.fixture
def constant_config():
    """Degenerate model over a short ladder."""
    return ExperimentConfig(model=ConstantModel(value=[0, 2]), sizes=[1, 2, 4], seed=5)


@pytest.fixture
def rgg_config():
    """Small geometric graphs, estimated from samples."""
    return ExperimentConfig(
        model=RggModel(n=6, r=1.0), sizes=[6, 7, 8], replicates=2000, n_bootstrap=10, seed=11
    )


class TestFitDecaySlope:
    """Test cases for fit_decay_slope."""

    def test_exact_power_law(self):
        """Test a clean n^-1/2 sequence recovers slope -1/2."""
        sizes = [100, 400, 1600, 6400]
        slope, se = fit_decay_slope(sizes, [3.0 * s**-0.5 for s in sizes])

        assert slope == pytest.approx(-0.5, abs=1e-6)
        assert se == pytest.approx(0.0, abs=1e-6)

    def test_weights_ignore_noisy_point(self):
        """Test a point with a huge standard error barely moves the fit."""
        sizes = [10, 100, 1000, 10000]
        values = [s**-1.0 for s in sizes]
        values[-1] *= 10.0
        errors = [1e-6 * v for v in values]
        errors[-1] = 1e3 * values[-1]

        slope, _ = fit_decay_slope(sizes, values, errors)

        assert slope == pytest.approx(-1.0, abs=1e-3)

    def test_zero_errors_fall_back(self):
        """Test all-zero standard errors give the unweighted fit."""
        sizes = [1, 2, 4]
        values = [1.0, 0.5, 0.3]

        assert fit_decay_slope(sizes, values, [0.0, 0.0, 0.0]) == fit_decay_slope(sizes, values)

    def test_too_few_points(self):
        """Test fewer than three points are rejected."""
        with pytest.raises(DomainError, match="three"):
            fit_decay_slope([1, 2], [1.0, 0.5])

    def test_non_positive_values(self):
        """Test a zero TV estimate cannot be fit on a log scale."""
        with pytest.raises(DomainError, match="positive"):
            fit_decay_slope([1, 2, 3], [1.0, 0.0, 0.5])

    def test_equal_sizes(self):
        """Test a ladder without spread is rejected."""
        with pytest.raises(DomainError, match="equal"):
            fit_decay_slope([5, 5, 5], [1.0, 0.5, 0.25])


class TestDrawReplicates:
    """Test cases for draw_replicates."""

    def test_independent_of_threads(self):
        """Test chunked draws are identical for any thread count."""
        service = create_service(
            ColoringModel(num_vertices=30, pi=[0.5, 0.3, 0.2], family="cycle")
        )
        single = draw_replicates(service, make_rng(3), 2500, threads=1)
        pooled = draw_replicates(service, make_rng(3), 2500, threads=3)

        assert single.shape == (2500, 3)
        np.testing.assert_array_equal(single, pooled)


class TestConvergenceExperiment:
    """Test cases for run_convergence_experiment."""

    def test_constant_model(self, constant_config):
        """Test a degenerate model never converges: slope 0, TV = 1 - DN mass."""
        report = run_convergence_experiment(constant_config)
        params = DnParams.from_arrays([0.0, 2.0], np.eye(2))
        expected = 1.0 - dn_pmf(params, [0, 2])

        assert [row.tv_method for row in report.rows] == ["exact"] * 3
        for row in report.rows:
            assert row.tv_estimate == pytest.approx(expected, abs=1e-9)
            assert row.bound_breakdown is None
        assert report.slope == pytest.approx(0.0, abs=1e-12)
        assert report.reference_slope == 0.0

    def test_asymmetric_chain_rate(self):
        """Test occupation counts approach DN at rate n^-1/2."""
        config = ExperimentConfig(
            model=MarkovModel(P=[[0.9, 0.1], [0.2, 0.8]]), sizes=[100, 400, 1600]
        )
        report = run_convergence_experiment(config)
        values = [row.tv_estimate for row in report.rows]

        assert values[0] > values[1] > values[2]
        assert report.slope == pytest.approx(-0.5, abs=0.1)
        assert report.reference_slope == -0.5
        assert [row.rate_reference for row in report.rows] == pytest.approx([0.1, 0.05, 0.025])

    def test_sticky_symmetric_chain_rate(self):
        """Test the start-state bias of a symmetric sticky chain decays like n^-1/2."""
        config = ExperimentConfig(
            model=MarkovModel(P=[[0.8, 0.2], [0.2, 0.8]]), sizes=[100, 400, 1600]
        )
        report = run_convergence_experiment(config)
        values = [row.tv_estimate for row in report.rows]

        assert values[0] > values[1] > values[2]
        assert report.slope == pytest.approx(-0.5, abs=0.1)

    def test_iid_chain_rate(self):
        """Test binomial counts converge at least as fast as n^-1/2."""
        config = ExperimentConfig(
            model=MarkovModel(P=[[0.5, 0.5], [0.5, 0.5]]), sizes=[100, 400, 1600]
        )
        report = run_convergence_experiment(config)
        values = [row.tv_estimate for row in report.rows]

        assert values[0] > values[1] > values[2]
        assert report.slope < -0.4

    def test_markov_breakdown(self):
        """Test each row of a chain experiment carries a rate breakdown."""
        config = ExperimentConfig(
            model=MarkovModel(P=[[0.9, 0.1], [0.2, 0.8]]), sizes=[100, 200, 400]
        )
        report = run_convergence_experiment(config)

        for row in report.rows:
            assert row.bound_breakdown is not None
            assert row.bound_breakdown.eps_w == pytest.approx(row.m**-0.5)

    def test_empirical_rows(self, rgg_config):
        """Test models without an exact oracle are estimated from samples."""
        report = run_convergence_experiment(rgg_config)

        assert [row.tv_method for row in report.rows] == ["empirical"] * 3
        assert all(row.mc_std_error > 0 for row in report.rows)
        assert report.reference_slope == -1.0

    def test_deterministic(self, rgg_config):
        """Test equal seeds reproduce the report for any thread count."""
        first = run_convergence_experiment(rgg_config, threads=1)
        second = run_convergence_experiment(rgg_config, threads=3)

        assert first == second

    def test_seed_changes_estimates(self, rgg_config):
        """Test a different seed gives different samples."""
        first = run_convergence_experiment(rgg_config)
        other = run_convergence_experiment(rgg_config.model_copy(update={"seed": 12}))

        assert first.rows[0].tv_estimate != other.rows[0].tv_estimate

    def test_error_names_size(self):
        """Test failures report the ladder position."""
        config = ExperimentConfig(
            model=ColoringModel(num_vertices=4, pi=[0.5, 0.5], family="grid"),
            sizes=[5, 9, 16],
        )

        with pytest.raises(DomainError, match=r"size #0 \(5\)"):
            run_convergence_experiment(config)

    def test_ladder_must_increase(self):
        """Test a non-increasing ladder is rejected at load time."""
        with pytest.raises(ValueError, match="strictly increasing"):
            ExperimentConfig(model=ConstantModel(value=[0]), sizes=[1, 3, 2])


class TestEmitReport:
    """Test cases for report_to_csv and emit_report."""

    def test_empty_csv(self):
        """Test a report with no rows is the header line alone."""
        report = ConvergenceReport(model_kind="constant", seed=1, reference_slope=0.0)

        assert report_to_csv(report) == ",".join(CSV_HEADER) + "\n"

    def test_csv_rows(self, constant_config):
        """Test one line per size with empty breakdown cells."""
        report = run_convergence_experiment(constant_config)
        lines = emit_report(report, "csv").splitlines()

        assert lines[0].split(",") == CSV_HEADER
        assert len(lines) == 4
        cells = lines[1].split(",")
        assert cells[0] == "1"
        assert cells[5] == "exact"
        assert cells[-3:] == ["", "", ""]
        assert float(cells[2]) == report.rows[0].tv_estimate

    def test_json_round_trip(self, constant_config):
        """Test the JSON report validates back to an equal report."""
        report = run_convergence_experiment(constant_config)
        text = emit_report(report, "json")

        assert ConvergenceReport.model_validate_json(text) == report

    def test_write_to_path(self, tmp_path, constant_config):
        """Test the report is written when a path is given."""
        report = run_convergence_experiment(constant_config)
        path = tmp_path / "report.csv"

        text = emit_report(report, "csv", path)

        assert path.read_text(encoding="utf-8") == text

    def test_bad_path(self, tmp_path, constant_config):
        """Test an unwritable path is a domain error."""
        report = run_convergence_experiment(constant_config)

        with pytest.raises(DomainError, match="Cannot write"):
            emit_report(report, "json", tmp_path / "missing" / "report.json")

    def test_unknown_format(self, constant_config):
        """Test formats other than csv and json are rejected."""
        report = run_convergence_experiment(constant_config)

        with pytest.raises(DomainError, match="format"):
            emit_report(report, "xml")

    def test_rate_reference_is_finite(self, constant_config):
        """Test the size^0 reference stays one."""
        report = run_convergence_experiment(constant_config)

        assert all(math.isclose(row.rate_reference, 1.0) for row in report.rows)
