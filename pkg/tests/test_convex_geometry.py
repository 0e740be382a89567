import numpy as np
import pytest

from ou_lab.models.convex_geometry import (Ball, Ellipsoid, FullSpace, HalfSpace, Intersection, PenalizedScene,
                                           Potential, Sublevel, abs_potential, bump_quadrature,
                                           check_firm_nonexpansive, check_gradient_consistency,
                                           check_gradient_lipschitz, check_midpoint_convexity, domain_distance,
                                           eta_schedule, linear_potential, logcosh_potential, make_domain,
                                           make_potential, mollify_potential, moreau_envelope, penalized_potential,
                                           project_domain, proximal_point, quadratic_potential, sqdist_potential,
                                           zero_potential)
from ou_lab.models.oracle import ball_projection, halfspace_distance, huber, quadratic_moreau
from ou_lab.utils.exceptions import DimensionMismatch, InvalidParameter, QuadratureOrderTooLow, ScheduleInfeasible


class TestDomains:
    def test_halfspace_projection(self):
        domain = HalfSpace([1.0, 1.0], 1.0)
        projected = domain.project(np.array([[2.0, 2.0], [0.0, 0.0]]))
        np.testing.assert_allclose(projected, [[0.5, 0.5], [0.0, 0.0]])
        assert domain.contains(projected).all()
        np.testing.assert_allclose(domain_distance(domain, np.array([2.0, 2.0])),
                                   halfspace_distance([1.0, 1.0], 1.0, np.array([2.0, 2.0])))

    def test_zero_normal(self):
        with pytest.raises(InvalidParameter):
            HalfSpace([0.0, 0.0], 1.0)

    def test_ball_matches_closed_form(self, rng):
        domain = Ball([0.5, -0.5], 1.2)
        for x in rng.normal(scale=2.0, size=(20, 2)):
            np.testing.assert_allclose(domain.project(x), ball_projection([0.5, -0.5], 1.2, x), atol=1e-14)

    def test_round_ellipsoid_is_a_ball(self, rng):
        points = rng.normal(scale=3.0, size=(50, 2))
        np.testing.assert_allclose(Ellipsoid([0.0, 0.0], [1.5, 1.5]).project(points),
                                   Ball([0.0, 0.0], 1.5).project(points), atol=1e-10)

    def test_ellipsoid_projection_is_optimal(self, rng):
        domain = Ellipsoid([0.0, 0.0], [2.0, 0.5])
        points = rng.normal(scale=4.0, size=(50, 2))
        projected = domain.project(points)
        outside = ~domain.contains(points)
        z = projected[outside] / domain.semi_axes
        np.testing.assert_allclose(np.sum(z ** 2, axis=1), 1.0, atol=1e-9)
        # x - P(x) is parallel to the normal (P(x) - c) / a^2
        normal = projected[outside] / domain.semi_axes ** 2
        residual = points[outside] - projected[outside]
        cross = normal[:, 0] * residual[:, 1] - normal[:, 1] * residual[:, 0]
        np.testing.assert_allclose(cross, 0.0, atol=1e-8)

    def test_dykstra_half_disc(self):
        domain = Intersection([HalfSpace([1.0, 0.0], 0.0), Ball([0.0, 0.0], 1.0)])
        np.testing.assert_allclose(domain.project(np.array([2.0, 0.5])), [0.0, 0.5], atol=1e-8)
        np.testing.assert_allclose(domain.project(np.array([-0.2, 0.1])), [-0.2, 0.1])
        lower, upper = domain.bounding_box()
        np.testing.assert_allclose(lower, [-1.0, -1.0])
        np.testing.assert_allclose(upper, [1.0, 1.0])

    def test_intersection_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            Intersection([HalfSpace([1.0], 0.0), Ball([0.0, 0.0], 1.0)])

    def test_sublevel_disc(self):
        disc = Sublevel(Potential(eval=lambda x: np.sum(np.asarray(x) ** 2, axis=-1) - 1.0,
                                  grad=lambda x: 2.0 * np.asarray(x), label="disc"), 2)
        np.testing.assert_allclose(disc.project(np.array([[3.0, 4.0]])), [[0.6, 0.8]], atol=1e-6)

    def test_wrong_dimension(self):
        with pytest.raises(DimensionMismatch):
            Ball([0.0, 0.0], 1.0).project(np.zeros(3))

    def test_non_finite_points(self):
        with pytest.raises(InvalidParameter):
            project_domain(FullSpace(1), np.array([np.nan]))

    @pytest.mark.parametrize("domain", [HalfSpace([1.0, -2.0], 0.3), Ball([0.0, 1.0], 0.7),
                                        Ellipsoid([0.0, 0.0], [1.0, 3.0]),
                                        Intersection([HalfSpace([0.0, 1.0], 0.0), Ball([0.0, 0.0], 2.0)])])
    def test_projection_properties(self, domain, rng):
        x = rng.normal(scale=3.0, size=(200, 2))
        z = rng.normal(scale=3.0, size=(200, 2))
        assert check_firm_nonexpansive(domain, x, z, tol=1e-7).all()
        assert check_gradient_lipschitz(domain, x, z - x, tol=1e-7).all()

    def test_make_domain(self):
        assert isinstance(make_domain("full", 2), FullSpace)
        assert isinstance(make_domain("ball", 2, radius=1.0), Ball)
        with pytest.raises(InvalidParameter):
            make_domain("cube", 2)


class TestPotentials:
    @pytest.mark.parametrize("potential", [quadratic_potential(2.0, [0.5, 0.0]), linear_potential([1.0, -1.0]),
                                           logcosh_potential(1.5, 0.5), sqdist_potential(Ball([0.0, 0.0], 1.0))])
    def test_gradients(self, potential, rng):
        points = rng.normal(scale=2.0, size=(50, 2))
        assert check_gradient_consistency(potential, points)

    def test_convexity(self, rng):
        potential = logcosh_potential(1.0, 0.3)
        a, b = rng.normal(size=(100, 2)), rng.normal(size=(100, 2))
        assert check_midpoint_convexity(potential, a, b).all()

    def test_make_potential(self):
        assert make_potential("zero", 2).label == "zero"
        with pytest.raises(InvalidParameter):
            make_potential("cubic", 2)
        with pytest.raises(InvalidParameter):
            quadratic_potential(-1.0)


class TestMoreau:
    def test_abs_envelope_is_huber(self):
        x = np.linspace(-2.0, 2.0, 41)[:, None]
        result = moreau_envelope(abs_potential(), 0.3, x)
        np.testing.assert_allclose(result.value, huber(0.3, x[:, 0]), atol=1e-14)

    def test_quadratic_envelope(self, rng):
        x = rng.normal(size=(10, 2))
        result = moreau_envelope(quadratic_potential(2.0), 0.25, x)
        expected = np.array([quadratic_moreau(0.25, row, weight=2.0) for row in x])
        np.testing.assert_allclose(result.value, expected, rtol=1e-12)
        np.testing.assert_allclose(result.gradient, 2.0 * x / (1.0 + 0.5), rtol=1e-12)

    def test_newton_prox_optimality(self, rng):
        potential = logcosh_potential(2.0, 0.5)
        x = rng.normal(scale=2.0, size=(20, 2))
        y = proximal_point(potential, 0.1, x)
        np.testing.assert_allclose(potential.grad(y) + (y - x) / 0.1, 0.0, atol=1e-8)

    def test_quasi_newton_prox(self):
        # no Hessian and no closed-form prox
        potential = Potential(eval=lambda x: np.sum(np.asarray(x) ** 4, axis=-1) / 4.0,
                              grad=lambda x: np.asarray(x) ** 3, label="quartic")
        x = np.array([[1.5, -0.5]])
        y = proximal_point(potential, 0.2, x)
        np.testing.assert_allclose(y ** 3 + (y - x) / 0.2, 0.0, atol=1e-6)

    @pytest.mark.parametrize("potential", [logcosh_potential(), logcosh_potential(2.0, 0.5), abs_potential(1.5)],
                             ids=["logcosh", "logcosh-steep", "abs"])
    @pytest.mark.parametrize("eps", [0.5, 0.05, 2.0 ** -12])
    def test_envelope_below_function(self, rng, potential, eps):
        x = rng.normal(scale=3.0, size=(30, 2))
        assert np.all(moreau_envelope(potential, eps, x).value <= potential.eval(x) + 1e-12)

    @pytest.mark.parametrize("potential", [logcosh_potential(1.0, 0.3), quadratic_potential(2.0, [1.0, -1.0]),
                                           abs_potential()], ids=["logcosh", "quadratic", "abs"])
    def test_envelope_grows_as_epsilon_shrinks(self, rng, potential):
        x = rng.normal(scale=2.0, size=(25, 2))
        values = [moreau_envelope(potential, 2.0 ** -k, x).value for k in range(1, 11)]
        for coarse, fine in zip(values, values[1:]):
            assert np.all(fine >= coarse - 1e-8)

    def test_small_epsilon_sequence(self, rng):
        potential = logcosh_potential(1.0, 0.3)
        x = rng.normal(scale=2.0, size=(20, 1))
        for k in range(1, 21):
            result = moreau_envelope(potential, 2.0 ** -k, x)
            assert np.all(np.isfinite(result.value))
        np.testing.assert_allclose(result.gradient, potential.grad(x), atol=1e-3)

    @pytest.mark.parametrize("potential", [quadratic_potential(0.5), quadratic_potential(1.0, [0.5, 0.0]),
                                           quadratic_potential(4.0, [1.0, -1.0]), logcosh_potential(1.0, 0.3)])
    def test_envelope_gradient_converges(self, rng, potential):
        x = rng.normal(scale=2.0, size=(20, 2))
        gaps = [float(np.max(np.linalg.norm(moreau_envelope(potential, 2.0 ** -k, x).gradient - potential.grad(x),
                                            axis=1))) for k in range(1, 21)]
        assert gaps[-1] < 1e-3
        assert gaps[-1] < gaps[0]

    def test_envelope_gradient(self, rng):
        potential = logcosh_potential(1.0, 0.5)
        envelope = Potential(eval=lambda x: moreau_envelope(potential, 0.2, x).value,
                             grad=lambda x: moreau_envelope(potential, 0.2, x).gradient, label="envelope")
        assert check_gradient_consistency(envelope, rng.normal(size=(10, 2)), tol=1e-5)

    def test_epsilon_must_be_positive(self):
        with pytest.raises(InvalidParameter):
            moreau_envelope(zero_potential(), 0.0, np.zeros((1, 1)))


class TestPenalizedScene:
    def test_pure_distance_penalty(self, model2d):
        scene = PenalizedScene(zero_potential(), HalfSpace([1.0, 0.0], 0.0), 0.1, model2d)
        x = np.array([[0.5, 1.0], [-1.0, 2.0]])
        value, gradient = penalized_potential(scene, x)
        np.testing.assert_allclose(value, [0.5 ** 2 / 0.2, 0.0])
        np.testing.assert_allclose(gradient, [[5.0, 0.0], [0.0, 0.0]])

    def test_gradient_consistency(self, ball_scene, rng):
        assert check_gradient_consistency(ball_scene.as_potential(), rng.normal(scale=2.0, size=(30, 2)))

    def test_validation(self, model2d):
        with pytest.raises(InvalidParameter):
            PenalizedScene(zero_potential(), FullSpace(2), 0.0, model2d)
        with pytest.raises(DimensionMismatch):
            PenalizedScene(zero_potential(), FullSpace(1), 0.1, model2d)
        with pytest.raises(InvalidParameter):
            PenalizedScene(zero_potential(), FullSpace(2), 0.1, model2d, eta_schedule=(0.5, 0.5))

    def test_with_epsilon(self, ball_scene):
        assert ball_scene.with_epsilon(0.01).epsilon == 0.01
        assert ball_scene.gradient_lipschitz_bound() == pytest.approx(1.0 / 0.05 + 0.5)


class TestMollification:
    @pytest.mark.parametrize("dim", [1, 2, 3])
    def test_quadrature_mass(self, dim):
        nodes, weights = bump_quadrature(dim, 6)
        assert weights.sum() == pytest.approx(1.0)
        assert np.all(np.sum(nodes ** 2, axis=1) < 1.0)
        np.testing.assert_allclose(weights @ nodes, 0.0, atol=1e-14)

    def test_order_too_low(self):
        with pytest.raises(QuadratureOrderTooLow):
            bump_quadrature(1, 2)

    def test_quadratic_gradient_is_exact(self, rng):
        x = rng.normal(size=(5, 2))
        result = mollify_potential(quadratic_potential(1.0), 0.3, x)
        np.testing.assert_allclose(result.gradient, x, atol=1e-12)
        assert np.all(result.value >= 0.5 * np.sum(x ** 2, axis=1))

    def test_eta_must_be_positive(self):
        with pytest.raises(InvalidParameter):
            mollify_potential(zero_potential(), 0.0, np.zeros((1, 1)))

    def test_schedule_of_smooth_scene(self, model1d):
        scene = PenalizedScene(quadratic_potential(1.0), FullSpace(1), 0.1, model1d)
        assert eta_schedule(scene, [1], mc_samples=200, seed=0) == [1.0]

    def test_schedule_of_halfspace_scene_decreases(self, model2d):
        scene = PenalizedScene(quadratic_potential(1.0), HalfSpace([1.0, 0.0], 0.0), 0.1, model2d)
        first, second = eta_schedule(scene, [1, 2], mc_samples=200, seed=3)
        assert first > second > 0.0

    def test_schedule_is_reproducible(self, model2d):
        scene = PenalizedScene(quadratic_potential(1.0), HalfSpace([1.0, 0.0], 0.0), 0.1, model2d)
        assert eta_schedule(scene, [1, 2], mc_samples=200, seed=3) == eta_schedule(scene, [1, 2], mc_samples=200,
                                                                                   seed=3)

    def test_schedule_bisects_past_the_halving(self, model1d):
        scene = PenalizedScene(quadratic_potential(1.0), HalfSpace([1.0], 0.0), 0.1, model1d)
        halved, = eta_schedule(scene, [1], mc_samples=200, seed=3, bisections=0)
        bisected, = eta_schedule(scene, [1], mc_samples=200, seed=3)
        assert halved <= bisected < 2.0 * halved

    def test_infeasible_schedule_reports_last_eta(self, model1d):
        scene = PenalizedScene(quadratic_potential(1.0), HalfSpace([1.0], 0.0), 0.01, model1d)
        with pytest.raises(ScheduleInfeasible, match="no eta >= 0.5 reaches"):
            eta_schedule(scene, [1], mc_samples=200, seed=3, max_halvings=1)

    def test_schedule_levels_increase(self, model2d):
        scene = PenalizedScene(quadratic_potential(1.0), FullSpace(2), 0.1, model2d)
        with pytest.raises(InvalidParameter):
            eta_schedule(scene, [2, 1], mc_samples=100, seed=0)
        with pytest.raises(DimensionMismatch):
            eta_schedule(scene, [1, 3], mc_samples=100, seed=0)
