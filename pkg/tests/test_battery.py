import numpy as np
import pytest

from ou_lab.checks.battery import (FAMILIES, TAGS, bump, constant, default_battery, exponential, make_function,
                                   tanh)
from ou_lab.utils.exceptions import InvalidParameter, UnknownForm


def fd_gradient(f, points, step=1e-6):
    out = np.empty_like(points)
    for j in range(points.shape[-1]):
        shift = np.zeros(points.shape[-1])
        shift[j] = step
        out[:, j] = (f(points + shift) - f(points - shift)) / (2.0 * step)
    return out


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_default_battery(dim, rng):
    battery = default_battery(dim)
    assert len(battery) == 20
    assert len({f.label for f in battery}) == 20
    points = rng.normal(size=(25, dim))
    for f in battery:
        assert set(f.tags) <= set(TAGS)
        assert f(points).shape == (25,)
        np.testing.assert_allclose(f.grad(points), fd_gradient(f, points), atol=1e-5, err_msg=f.label)
        if np.isfinite(f.sup_norm):
            assert np.all(np.abs(f(points)) <= f.sup_norm + 1e-12)
        if f.lipschitz is not None:
            assert np.all(np.linalg.norm(f.grad(points), axis=-1) <= f.lipschitz + 1e-12)


def test_tags():
    assert tanh(1, steepness=10.0).has("discontinuous-approx")
    assert not tanh(1, steepness=1.0).has("discontinuous-approx")
    assert constant(2, -1.0).has("constant") and not constant(2, -1.0).has("nonnegative")
    assert exponential(1, rate=0.5).has("exponential")


def test_power_gradient(rng):
    f = tanh(2, axis=1, steepness=2.0, shift=0.3)
    cube = f.power(3.0)
    points = rng.normal(size=(10, 2))
    np.testing.assert_allclose(cube(points), np.abs(f(points)) ** 3)
    np.testing.assert_allclose(cube.grad(points), fd_gradient(cube, points), atol=1e-5)
    assert cube.sup_norm == 1.0


def test_products_and_compositions(rng):
    f, g = bump(1, width=0.5), exponential(1, rate=0.3)
    points = rng.normal(size=(10, 1))
    product = f.times(g)
    np.testing.assert_allclose(product(points), f(points) * g(points))
    np.testing.assert_allclose(product.grad(points), fd_gradient(product, points), atol=1e-5)
    square = f.compose(np.square, "sq")
    np.testing.assert_allclose(square(points), f(points) ** 2)
    with pytest.raises(InvalidParameter):
        square.grad(points)


def test_grad_norm_power():
    f = tanh(1, steepness=2.0)
    g = f.grad_norm_power(2.0)
    assert g.sup_norm == pytest.approx(4.0)
    assert g(np.zeros((1, 1)))[0] == pytest.approx(4.0)


def test_make_function():
    f = make_function("tanh", 2, label="jump", steepness=10.0)
    assert f.label == "jump"
    assert f.lipschitz == pytest.approx(10.0)
    assert set(FAMILIES) >= {"constant", "linear", "tanh", "exp"}
    with pytest.raises(UnknownForm):
        make_function("spline", 2)
    with pytest.raises(InvalidParameter):
        make_function("tanh", 2, radius=1.0)
    with pytest.raises(InvalidParameter):
        make_function("linear", 2, direction=[1.0, 0.0, 0.0])
