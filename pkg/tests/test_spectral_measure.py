import numpy as np
import pytest
from scipy import stats

from ou_lab.models.spectral_measure import (GaussianModel, conditional_expectation, log_density_gaussian,
                                            lp_norm_contractivity, sample_gaussian, validate_spectrum)
from ou_lab.utils.exceptions import (ConfigInvalid, DimensionMismatch, EmptySpectrum, NonPositiveEigenvalue)


class TestValidateSpectrum:
    def test_sorted_non_increasing(self):
        spectrum = validate_spectrum([0.25, 1.0, 0.5])
        assert spectrum.eigenvalues == (1.0, 0.5, 0.25)
        assert spectrum.lambda1 == 1.0
        assert spectrum.beta == 1.0
        assert spectrum.trace == pytest.approx(1.75)

    @pytest.mark.parametrize("raw", [[1.0, 0.0], [-0.5], [1.0, float("nan")], [float("inf")]])
    def test_rejects_bad_eigenvalues(self, raw):
        with pytest.raises(NonPositiveEigenvalue) as info:
            validate_spectrum(raw)
        assert info.value.exit_code == 2

    @pytest.mark.parametrize("raw", [[], None])
    def test_rejects_empty(self, raw):
        with pytest.raises(EmptySpectrum):
            validate_spectrum(raw)

    def test_errors_are_config_errors(self):
        with pytest.raises(ConfigInvalid):
            validate_spectrum([0.0])


class TestGaussianModel:
    def test_truncation(self):
        model = GaussianModel.from_eigenvalues([1.0, 0.5, 0.25], dim=2)
        assert model.dim == 2
        np.testing.assert_allclose(model.lambdas, [1.0, 0.5])
        np.testing.assert_allclose(model.linear_drift(np.array([1.0, 1.0])), [-1.0, -2.0])

    @pytest.mark.parametrize("dim", [0, 4])
    def test_dim_out_of_range(self, dim):
        with pytest.raises(DimensionMismatch):
            GaussianModel.from_eigenvalues([1.0, 0.5, 0.25], dim=dim)

    def test_log_density_matches_scipy(self, model2d, rng):
        points = rng.normal(size=(10, 2))
        expected = stats.multivariate_normal(mean=[0.0, 0.0], cov=np.diag([1.0, 0.5])).logpdf(points)
        np.testing.assert_allclose(log_density_gaussian(model2d, points), expected, rtol=1e-12)

    def test_log_density_checks_dimension(self, model2d):
        with pytest.raises(DimensionMismatch):
            log_density_gaussian(model2d, np.zeros((3, 3)))


class TestSampling:
    def test_reproducible(self, model2d):
        a = sample_gaussian(model2d, 5000, seed=7).points
        b = sample_gaussian(model2d, 5000, seed=7).points
        np.testing.assert_array_equal(a, b)

    def test_blocks_do_not_depend_on_count(self, model2d):
        short = sample_gaussian(model2d, 4096, seed=11).points
        long = sample_gaussian(model2d, 6000, seed=11).points
        np.testing.assert_array_equal(long[:4096], short)

    def test_workers_do_not_change_draws(self, model2d):
        serial = sample_gaussian(model2d, 9000, seed=3, block_size=1000).points
        threaded = sample_gaussian(model2d, 9000, seed=3, block_size=1000, workers=4).points
        np.testing.assert_array_equal(serial, threaded)

    def test_variances(self, model2d):
        points = sample_gaussian(model2d, 40000, seed=5).points
        np.testing.assert_allclose(points.var(axis=0), model2d.lambdas, rtol=0.05)

    def test_weighted_batch_mass(self, model1d):
        batch = sample_gaussian(model1d, 20000, seed=1)
        mass = batch.mass()
        assert mass.value == 1.0
        assert mass.ci_halfwidth == 0.0


class TestConditionalExpectation:
    def test_full_dimension_is_evaluation(self, model2d):
        estimate = conditional_expectation(lambda x: x[:, 0] * x[:, 1], model2d, 2, [2.0, 3.0], 100, seed=0)
        assert estimate.value == 6.0
        assert estimate.ci_halfwidth == 0.0

    def test_tail_integrated(self):
        model = GaussianModel.from_eigenvalues([1.0, 0.5, 0.25])
        estimate = conditional_expectation(lambda x: x[:, 0] + x[:, 1] ** 2 + x[:, 2], model, 1, [0.7], 20000,
                                           seed=2)
        # E[xi_2^2] = 0.5, E[xi_3] = 0
        assert abs(estimate.value - 1.2) <= max(3.0 * estimate.ci_halfwidth, 0.02)

    def test_bad_level(self, model2d):
        with pytest.raises(DimensionMismatch):
            conditional_expectation(lambda x: x[:, 0], model2d, 3, [0.0, 0.0], 10, seed=0)

    @pytest.mark.parametrize("p", [1.0, 2.0, 3.5])
    def test_contractivity_holds_draw_by_draw(self, p):
        model = GaussianModel.from_eigenvalues([1.0, 0.5, 0.25])
        conditional, full = lp_norm_contractivity(lambda x: np.tanh(x[:, 0] + 2.0 * x[:, 2]), model, 1, p,
                                                  outer=500, inner=20, seed=4)
        assert conditional.value <= full.value + 1e-12
