import math
from dataclasses import replace

import numpy as np
import pytest

from ou_lab.checks import inequality_lab as lab
from ou_lab.checks.battery import bump, exponential, linear, tanh
from ou_lab.checks.evaluators import LabContext
from ou_lab.checks.reports import Verdict
from ou_lab.models.convex_geometry import FullSpace, HalfSpace, PenalizedScene, zero_potential
from ou_lab.models.spectral_measure import GaussianModel
from ou_lab.utils.exceptions import (DimensionMismatch, FitInsufficientPoints, InvalidParameter, UnstableStep)


def no_failures(reports):
    failed = [r for r in reports if r.outcome == Verdict.FAIL]
    assert not failed, [(r.name, r.lhs, r.rhs, r.tolerance, r.metadata) for r in failed]


def test_default_points_are_projected(halfline_scene):
    points = lab.default_points(halfline_scene)
    assert points.shape == (4, 1)
    assert np.all(points <= 0.0)
    with pytest.raises(DimensionMismatch):
        lab.default_points(halfline_scene, np.zeros((2, 2)))


def test_hyper_exponent():
    assert lab.hyper_exponent(2.0, 0.0, 1.0) == pytest.approx(2.0)
    assert lab.hyper_exponent(2.0, 0.5, 1.0) == pytest.approx(math.e + 1.0)


def test_three_dimensional_scene_uses_monte_carlo(small_settings):
    model = GaussianModel.from_eigenvalues([1.0, 0.5, 0.25])
    context = LabContext(PenalizedScene(zero_potential(), FullSpace(3), 0.1, model), small_settings)
    assert context.mode("grid") == "mc"


class TestGradientEstimates:
    def test_pointwise_grid(self, free_scene, free_lab):
        report = lab.check_pointwise_gradient(free_scene, tanh(1), 0.5, 2.0, free_lab)
        assert report.name == "pointwise_gradient"
        assert report.metadata["mode"] == "grid"
        no_failures([report])

    def test_pointwise_monte_carlo(self, halfline_scene, halfline_lab):
        report = lab.check_pointwise_gradient(halfline_scene, tanh(1), 0.5, 2.0, halfline_lab, mode="mc")
        assert report.metadata["nodes"] == 4
        no_failures([report])

    def test_pointwise_needs_p_at_least_one(self, free_scene, free_lab):
        with pytest.raises(InvalidParameter):
            lab.check_pointwise_gradient(free_scene, tanh(1), 0.5, 0.5, free_lab)

    def test_smoothing_with_rate(self, free_scene, free_lab):
        times = np.geomspace(0.05, 0.8, 7)
        reports, fit = lab.check_smoothing(free_scene, tanh(1), 2.0, times, free_lab)
        names = {r.name for r in reports}
        assert names == {"smoothing", "integrated_smoothing", "smoothing_rate"}
        assert fit is not None and len(fit.times) == 7
        no_failures(reports)

    def test_rate_window_rejects_a_flat_rate(self, free_scene, free_lab):
        # the gradient of a smooth tanh stays bounded as t -> 0, so its slope sits near 0, not -1
        times = np.geomspace(0.01, 0.1, 7)
        reports, fit = lab.check_smoothing(free_scene, tanh(1), 2.0, times, free_lab, rate_window=(-1.1, -0.9))
        window, = [r for r in reports if r.name == "smoothing_rate_window"]
        lower, = [r for r in reports if r.name == "smoothing_rate"]
        assert fit.slope > -0.5
        assert window.verdict == Verdict.FAIL
        assert lower.verdict == Verdict.PASS
        assert lower.lhs == -1.1

    def test_rate_window_must_be_ordered(self, free_scene, free_lab):
        with pytest.raises(InvalidParameter):
            lab.check_smoothing(free_scene, tanh(1), 2.0, [0.1, 0.2], free_lab, rate_window=(-0.9, -1.1))

    def test_smoothing_of_constant_has_no_rate(self, free_scene, free_lab):
        from ou_lab.checks.battery import constant
        reports, fit = lab.check_smoothing(free_scene, constant(1, 2.0), 2.0, [0.1, 0.2], free_lab)
        assert fit is None
        no_failures(reports)

    def test_integrated_smoothing_needs_positive_time(self, free_scene, free_lab):
        with pytest.raises(InvalidParameter):
            lab.check_integrated_smoothing(free_scene, tanh(1), 2.0, 0.0, free_lab)

    def test_uniform_gradient(self, model1d, small_settings):
        reports = lab.check_uniform_gradient(model1d, None, tanh(1, steepness=3.0), [0.2, 1.0], small_settings)
        assert len(reports) == 2
        assert all(r.verdict == Verdict.PASS for r in reports)

    def test_uniform_gradient_needs_bounded_f(self, model1d, small_settings):
        with pytest.raises(InvalidParameter):
            lab.check_uniform_gradient(model1d, None, linear(1), [0.5], small_settings)


class TestFunctionalInequalities:
    @pytest.mark.parametrize("measure", ["restricted", "penalized"])
    def test_logsob(self, halfline_scene, halfline_lab, measure):
        functions = [linear(1), tanh(1, steepness=2.0), exponential(1, rate=0.5)]
        reports = lab.check_logsob(halfline_scene, functions, 2.0, halfline_lab, measure=measure)
        assert len(reports) == 3
        assert all(r.metadata["measure"] == measure for r in reports)
        no_failures(reports)

    def test_logsob_needs_p_above_one(self, halfline_scene, halfline_lab):
        with pytest.raises(InvalidParameter):
            lab.check_logsob(halfline_scene, [linear(1)], 1.0, halfline_lab)

    @pytest.mark.parametrize("p", [2.0, 3.0])
    def test_poincare(self, free_scene, free_lab, p):
        reports = lab.check_poincare(free_scene, [linear(1), tanh(1)], p, free_lab)
        no_failures(reports)

    def test_poincare_linear_is_sharp(self, free_scene, free_lab):
        report = lab.check_poincare(free_scene, [linear(1)], 2.0, free_lab)[0]
        assert report.rhs == pytest.approx(1.0)
        assert report.lhs == pytest.approx(1.0, abs=0.05)

    def test_hyper_bounded(self, free_scene, free_lab):
        reports = lab.check_hyper(free_scene, [tanh(1)], 2.0, 0.5, free_lab, p_list=[1.5, 3.0])
        assert [r.metadata["p"] for r in reports] == pytest.approx([math.e + 1.0, 1.5, 3.0])
        no_failures(reports)

    def test_hyper_breaks_beyond_critical_exponent(self, free_scene, free_lab):
        reports = lab.check_hyper(free_scene, [exponential(1, rate=0.5)], 2.0, 0.5, free_lab)
        beyond = [r for r in reports if r.metadata.get("beyond_critical")]
        assert len(beyond) == 1
        overshoot = beyond[0]
        assert overshoot.expected_verdict == Verdict.FAIL
        assert overshoot.lhs > overshoot.rhs

    def test_hyper_reflected_monte_carlo(self, halfline_scene, halfline_lab):
        reports = lab.check_hyper(halfline_scene, [tanh(1)], 2.0, 0.25, halfline_lab, mode="mc")
        assert len(reports) == 1
        assert reports[0].metadata["measure"] == "restricted"
        assert "scheme_bias" in reports[0].provenance
        no_failures(reports)

    def test_hyper_arguments(self, free_scene, free_lab):
        with pytest.raises(InvalidParameter):
            lab.check_hyper(free_scene, [tanh(1)], 1.0, 0.5, free_lab)


class TestLongTime:
    def test_decay(self, free_scene, free_lab):
        times = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5]
        reports, fits = lab.check_decay(free_scene, [tanh(1)], 2.0, times, free_lab)
        names = [r.name for r in reports]
        assert names.count("decay_l2") == len(times)
        assert names.count("decay_gradient") == 6
        assert names.count("decay_rate") == 3
        assert len(fits) == 3
        no_failures(reports)

    def test_decay_single_time(self, free_scene, free_lab):
        reports, fits = lab.check_decay(free_scene, [tanh(1)], 2.0, [0.7], free_lab, fit=False)
        assert [r.name for r in reports] == ["decay_l2"]
        assert fits == []

    def test_decay_reflected_monte_carlo(self, halfline_scene, halfline_lab):
        times = [0.5, 1.0, 1.5, 2.0, 3.0]
        reports, fits = lab.check_decay(halfline_scene, [tanh(1)], 2.0, times, halfline_lab, mode="mc")
        decay = [r for r in reports if r.name == "decay_l2"]
        assert len(decay) == len(times)
        assert all(r.metadata["mode"] == "mc" and r.metadata["measure"] == "restricted" for r in decay)
        assert all("scheme_bias" in r.provenance for r in decay)
        assert [r.name for r in reports].count("decay_rate") == 3
        assert halfline_lab.mc("restricted").semigroup.projector is not None
        no_failures(reports)

    def test_decay_arguments(self, free_scene, free_lab):
        with pytest.raises(FitInsufficientPoints):
            lab.check_decay(free_scene, [tanh(1)], 2.0, [1.0, 2.0, 3.0], free_lab)
        with pytest.raises(InvalidParameter):
            lab.check_decay(free_scene, [tanh(1)], 2.0, [0.1, 0.2, 0.3, 0.4, 0.5], free_lab)

    def test_asymptotic_mean(self, free_scene, free_lab):
        reports = lab.check_asymptotic_mean(free_scene, tanh(1, shift=0.5), [5.0], free_lab)
        names = {r.name for r in reports}
        assert names == {"asymptotic_mean_penalized", "asymptotic_mean_reflected"}
        assert len(reports) == 8
        no_failures(reports)

    def test_asymptotic_mean_needs_long_time(self, free_scene, free_lab):
        with pytest.raises(InvalidParameter):
            lab.check_asymptotic_mean(free_scene, tanh(1), [2.0], free_lab)


class TestPenalizationLimit:
    def test_reports(self, model1d, small_settings):
        settings = replace(small_settings, paths=2000, samples=5000)
        reports = lab.check_penalization_limit(zero_potential(), HalfSpace([1.0], 0.0), model1d, tanh(1), 0.5,
                                               np.array([-0.5]), [0.3, 0.1], functions=[tanh(1)],
                                               settings=settings)
        names = [r.name for r in reports]
        assert names.count("penalization_measure_trend") == 3
        assert names.count("penalization_gap_trend") == 1
        assert names[-1] == "penalization_gap"
        assert "scheme_bias" not in reports[-2].provenance
        assert "scheme_bias" in reports[-1].provenance

    def test_trend_needs_a_strict_decrease(self, rng):
        first = 0.2 + 0.01 * rng.normal(size=3000)
        steady, = lab.gap_trend_reports("gap", [first, first.copy()], [0.3, 0.29])
        rising, = lab.gap_trend_reports("gap", [first, first + 0.05], [0.3, 0.29])
        falling, = lab.gap_trend_reports("gap", [first, first - 0.05], [0.3, 0.29])
        assert steady.verdict == Verdict.INCONCLUSIVE
        assert rising.verdict == Verdict.FAIL
        assert falling.verdict == Verdict.PASS
        assert steady.declare_equality(False) is steady

    def test_epsilon_order(self, model1d, small_settings):
        with pytest.raises(InvalidParameter):
            lab.check_penalization_limit(zero_potential(), HalfSpace([1.0], 0.0), model1d, tanh(1), 0.5,
                                         np.array([-0.5]), [0.1, 0.3], settings=small_settings)

    def test_epsilon_against_step(self, model1d, small_settings):
        with pytest.raises(UnstableStep):
            lab.check_penalization_limit(zero_potential(), HalfSpace([1.0], 0.0), model1d, tanh(1), 0.5,
                                         np.array([-0.5]), [0.1, 0.005], settings=small_settings)

    def test_start_inside(self, model1d, small_settings):
        with pytest.raises(InvalidParameter):
            lab.check_penalization_limit(zero_potential(), HalfSpace([1.0], 0.0), model1d, tanh(1), 0.5,
                                         np.array([0.5]), [0.3, 0.1], settings=small_settings)


class TestSemigroupProperties:
    def test_order_properties(self, free_scene, free_lab):
        reports = lab.check_order_properties(free_scene, tanh(1), bump(1), 0.5, 2.0, free_lab)
        assert [r.name for r in reports] == ["jensen_square", "jensen_abs", "holder"]
        no_failures(reports)

    def test_invariance_grid(self, free_scene, free_lab):
        reports = lab.check_invariance(free_scene, [bump(1), tanh(1)], 1.0, free_lab)
        assert all(r.metadata["mode"] == "grid" for r in reports)
        no_failures(reports)

    def test_invariance_monte_carlo(self, halfline_scene, halfline_lab):
        reports = lab.check_invariance(halfline_scene, [bump(1)], 0.5, halfline_lab, mode="mc")
        assert reports[0].metadata["measure"] == "restricted"
        no_failures(reports)

    def test_contraction_and_positivity(self, free_scene, free_lab):
        reports = lab.check_contraction(free_scene, [tanh(1), bump(1)], [0.2, 1.0], free_lab)
        names = [r.name for r in reports]
        assert names.count("contraction") == 4
        assert names.count("positivity") == 2
        no_failures(reports)

    def test_resolvent_bounds(self, free_scene, free_lab):
        reports = lab.check_resolvent_bounds(free_scene, tanh(1), [1.0], free_lab)
        assert [r.name for r in reports] == ["resolvent_sup", "resolvent_gradient"]
        no_failures(reports)

    def test_resolvent_needs_bounded_f(self, free_scene, free_lab):
        with pytest.raises(InvalidParameter):
            lab.check_resolvent_bounds(free_scene, linear(1), [1.0], free_lab)


class TestMehlerAgreement:
    def test_grid(self, model1d, small_settings):
        reports = lab.check_mehler_agreement(model1d, tanh(1), [0.2, 1.0], small_settings, accuracy=1e-2)
        assert len(reports) == 2
        assert all(r.verdict == Verdict.PASS for r in reports)

    def test_monte_carlo(self, model1d, small_settings):
        reports = lab.check_mehler_agreement(model1d, tanh(1), [0.5], small_settings, mode="mc", points=[0.0, 1.0])
        assert len(reports) == 2
        no_failures(reports)

    def test_one_dimensional_only(self, model2d, small_settings):
        with pytest.raises(DimensionMismatch):
            lab.check_mehler_agreement(model2d, tanh(2), [0.5], small_settings)
