import math

import numpy as np
import pytest

from ou_lab.checks.reports import (GUARD_BAND, MIN_FIT_POINTS, Verdict, decide_verdict, fit_rate,
                                   make_array_report, make_report, poincare_constant, required_points,
                                   smoothing_constant)
from ou_lab.utils.exceptions import FitInsufficientPoints, InvalidParameter


class TestVerdicts:
    def test_clear_pass(self):
        assert decide_verdict(1.0, 2.0, 0.1) == (Verdict.PASS, False)

    def test_pass_within_tolerance(self):
        assert decide_verdict(1.05, 1.0, 0.1, equality=False) == (Verdict.PASS, False)

    def test_fail_below_guard_band(self):
        assert decide_verdict(1.0 + GUARD_BAND * 0.1 + 0.01, 1.0, 0.1)[0] == Verdict.FAIL

    def test_inconclusive_between(self):
        assert decide_verdict(1.2, 1.0, 0.1)[0] == Verdict.INCONCLUSIVE

    def test_equality_is_inconclusive(self):
        assert decide_verdict(1.0, 1.0 + 1e-3, 0.01) == (Verdict.INCONCLUSIVE, True)

    def test_declared_inequality_passes(self):
        assert decide_verdict(1.0, 1.0 + 1e-3, 0.01, equality=False) == (Verdict.PASS, False)

    def test_trivial_zero(self):
        assert decide_verdict(1e-5, 0.0, 1e-4) == (Verdict.PASS, False)

    @pytest.mark.parametrize("lhs,rhs", [(float("nan"), 1.0), (1.0, float("inf"))])
    def test_non_finite(self, lhs, rhs):
        assert decide_verdict(lhs, rhs, 0.1)[0] == Verdict.INCONCLUSIVE


class TestReports:
    def test_provenance_and_row(self):
        report = make_report("demo", 1.0, 2.0, {"ci": 0.1, "bias": 0.05}, t=0.5)
        assert report.provenance["roundoff"] == pytest.approx(1e-12 * 4.0)
        assert report.tolerance == pytest.approx(0.15 + 4e-12)
        assert report.margin == 1.0
        row = report.to_row()
        assert row["verdict"] == "PASS"
        assert row["outcome"] == "PASS"
        assert '"t": 0.5' in row["params"]
        assert row["provenance"].startswith("bias=0.05")

    def test_expected_failure(self):
        report = make_report("overshoot", 2.0, 1.0, {"ci": 0.01}, expected_verdict=Verdict.FAIL)
        assert report.verdict == Verdict.FAIL
        assert report.outcome == Verdict.PASS
        missed = make_report("overshoot", 1.0, 2.0, {"ci": 0.01}, expected_verdict=Verdict.FAIL)
        assert missed.outcome == Verdict.FAIL

    def test_declared_equality(self):
        report = make_report("sharp", 1.0, 1.0 + 1e-3, {"ci": 0.01})
        assert report.verdict == Verdict.INCONCLUSIVE
        declared = report.declare_equality(False)
        assert declared.verdict == Verdict.PASS and not declared.equality
        nodes = make_array_report("nodes", np.array([0.0, 0.5]), 1.0, {"discretization": 0.01})
        assert nodes.declare_equality(True) is nodes

    def test_array_worst_node(self):
        lhs = np.array([0.0, 0.5, 0.9])
        report = make_array_report("nodes", lhs, 1.0, {"discretization": 0.01})
        assert report.verdict == Verdict.PASS
        assert report.lhs == 0.9
        assert report.metadata["worst_node"] == 2
        assert report.metadata["pass_fraction"] == 1.0

    def test_array_tolerates_few_marginal_nodes(self):
        lhs = np.zeros(200)
        lhs[0] = 1.015
        report = make_array_report("nodes", lhs, 1.0, {"discretization": 0.01}, equality=False)
        assert report.metadata["n_below_guard"] == 0
        assert report.verdict == Verdict.PASS

    def test_array_fails_below_guard(self):
        lhs = np.zeros(200)
        lhs[0] = 1.5
        report = make_array_report("nodes", lhs, 1.0, {"discretization": 0.01}, equality=False)
        assert report.verdict == Verdict.FAIL


class TestRateFits:
    def test_semilog_slope(self):
        times = np.linspace(0.5, 4.0, 8)
        fit = fit_rate(times, 3.0 * np.exp(-2.0 * times), "semilog")
        assert fit.slope == pytest.approx(-2.0)
        assert fit.intercept == pytest.approx(math.log(3.0))
        assert fit.slope_ci == pytest.approx(0.0, abs=1e-8)
        rows = fit.to_rows("decay")
        assert len(rows) == 8 and rows[0]["name"] == "decay"

    def test_loglog_slope(self):
        times = np.geomspace(0.01, 0.1, 6)
        fit = fit_rate(times, times ** -1.0, "loglog")
        assert fit.slope == pytest.approx(-1.0)

    def test_drops_non_positive_values(self):
        times = np.arange(1.0, 8.0)
        values = np.exp(-times)
        values[2] = 0.0
        fit = fit_rate(times, values, "semilog")
        assert len(fit.times) == 6

    def test_insufficient_points(self):
        with pytest.raises(FitInsufficientPoints):
            fit_rate([1.0, 2.0, 3.0], [1.0, 0.5, 0.25], "semilog")
        with pytest.raises(InvalidParameter):
            fit_rate([1.0, 2.0], [1.0, 2.0], "linear")

    def test_required_points(self):
        assert required_points([0.5, 1.0], "semilog") == MIN_FIT_POINTS
        assert required_points([1.0, 100.0], "loglog") == 2 * MIN_FIT_POINTS
        assert required_points([1.0, 10.0], "loglog") == MIN_FIT_POINTS


class TestConstants:
    def test_smoothing_constant(self):
        assert smoothing_constant(2.0) == pytest.approx(0.5)
        assert smoothing_constant(4.0) == pytest.approx(0.25)
        value = smoothing_constant(1.5)
        assert 0.0 < value < np.inf

    def test_smoothing_constant_domain(self):
        with pytest.raises(InvalidParameter):
            smoothing_constant(1.0)

    def test_poincare_constant(self):
        assert poincare_constant(2.0, 0.5) == pytest.approx(math.sqrt(0.5))
        assert 0.0 < poincare_constant(3.0, 1.0) < np.inf
        assert 0.0 < poincare_constant(6.0, 1.0) < np.inf
        with pytest.raises(InvalidParameter):
            poincare_constant(1.5, 1.0)
