import numpy as np
import pytest

from ou_lab.models.convex_geometry import Ball, FullSpace, HalfSpace, zero_potential
from ou_lab.models.mc_solver import (McSemigroup, sample_invariant, semigroup_gradient, semigroup_mc_penalized,
                                     semigroup_mc_reflected, simulate_paths)
from ou_lab.utils.exceptions import EffectiveSampleSizeTooLow, InvalidParameter, PathBlowup


def ou_drift(x):
    return -x


def first(x):
    return np.asarray(x)[..., 0]


class TestSimulatePaths:
    def test_reproducible_and_worker_independent(self):
        serial = simulate_paths(ou_drift, [0.5], 0.2, 3000, 0.01, seed=9, block_size=500)
        threaded = simulate_paths(ou_drift, [0.5], 0.2, 3000, 0.01, seed=9, block_size=500, workers=3)
        np.testing.assert_array_equal(serial, threaded)

    def test_ou_mean_and_variance(self):
        t = 0.5
        states = simulate_paths(ou_drift, [1.0], t, 20000, 0.005, seed=1)[:, 0]
        se = np.sqrt(1.0 - np.exp(-2.0 * t)) / np.sqrt(len(states))
        assert abs(states.mean() - np.exp(-t)) < 4.0 * se + 0.01
        assert states.var() == pytest.approx(1.0 - np.exp(-2.0 * t), rel=0.05)

    def test_step_longer_than_horizon(self):
        with pytest.raises(InvalidParameter):
            simulate_paths(ou_drift, [0.0], 0.1, 10, 0.2, seed=0)

    def test_one_start_per_path(self):
        with pytest.raises(InvalidParameter):
            simulate_paths(ou_drift, np.zeros((5, 1)), 0.1, 10, 0.01, seed=0)

    def test_blowup(self):
        with pytest.raises(PathBlowup):
            simulate_paths(lambda x: 1e9 * np.ones_like(x), [0.0], 0.1, 10, 0.01, seed=0)


class TestSemigroups:
    def test_reflected_paths_stay_inside(self, model1d):
        semigroup = McSemigroup.reflected(model1d, zero_potential(), HalfSpace([1.0], 0.0), paths=2000, step=0.01,
                                          seed=3)
        states = semigroup.terminal_states(np.array([0.0]), 0.5)
        assert np.all(states <= 1e-12)

    def test_reflected_start_outside(self, model1d):
        with pytest.raises(InvalidParameter):
            semigroup_mc_reflected(model1d, zero_potential(), HalfSpace([1.0], 0.0), first, 0.5, [0.3], 100, 0.01,
                                   seed=0)

    def test_penalized_free_scene(self, free_scene):
        estimate = semigroup_mc_penalized(free_scene, first, 0.5, [1.0], 10000, 0.005, seed=2)
        assert abs(estimate.value - np.exp(-0.5)) < 4.0 * estimate.ci_halfwidth + 0.01
        assert estimate.paths == 10000
        row = estimate.to_row([1.0])
        assert row["xi_1"] == 1.0 and row["ci"] == estimate.ci_halfwidth

    def test_gradient_with_common_noise(self, model1d):
        semigroup = McSemigroup.reflected(model1d, zero_potential(), FullSpace(1), paths=2000, step=1e-3, seed=5)
        gradient = semigroup_gradient(semigroup, 0.5, np.array([0.3]), first)
        # the CRN difference of a linear f under a linear drift is deterministic
        assert gradient.value[0] == pytest.approx(np.exp(-0.5), abs=2e-3)
        assert gradient.ci_halfwidth[0] < 1e-8

    def test_gradient_needs_function(self, model1d):
        semigroup = McSemigroup.reflected(model1d, zero_potential(), FullSpace(1))
        with pytest.raises(InvalidParameter):
            semigroup_gradient(semigroup, 0.5)

    def test_apply_many(self, model1d):
        semigroup = McSemigroup.reflected(model1d, zero_potential(), FullSpace(1), step=0.01, seed=0)
        means, spread = semigroup.apply_many(first, 0.5, np.array([[0.0], [1.0]]), inner=4000)
        assert means.shape == (2,)
        np.testing.assert_allclose(means, [0.0, np.exp(-0.5)], atol=0.06)
        assert np.all(spread > 0.0)


class TestInvariantSampling:
    def test_importance_mass_of_half_line(self, model1d):
        batch = sample_invariant(model1d, 40000, seed=4, domain=HalfSpace([1.0], 0.0))
        assert np.all(batch.weights[batch.points[:, 0] > 0.0] == 0.0)
        mass = batch.mass()
        assert abs(mass.value - 0.5) < 3.0 * mass.ci_halfwidth + 1e-3

    def test_low_effective_sample_size(self, model1d):
        with pytest.raises(EffectiveSampleSizeTooLow):
            sample_invariant(model1d, 5000, seed=0, domain=Ball([0.0], 0.01))

    def test_long_run(self, model1d):
        batch = sample_invariant(model1d, 512, seed=6, domain=HalfSpace([1.0], 0.0), method="long_run")
        assert batch.count == 512
        assert np.all(batch.points <= 1e-12)
        np.testing.assert_array_equal(batch.weights, 1.0)

    def test_penalized_weights(self, halfline_scene):
        batch = sample_invariant(halfline_scene.model, 2000, seed=1, scene=halfline_scene)
        assert np.all(batch.weights > 0.0)
        assert np.all(batch.weights <= 1.0 + 1e-12)

    def test_unknown_method(self, model1d):
        with pytest.raises(InvalidParameter):
            sample_invariant(model1d, 10, seed=0, method="gibbs")
