# Cylindrical test functions with analytic gradients, used as data by every check.
# Copyright (c) 2026 The convex-ou-lab authors
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU Affero General Public License as published
# by the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Affero General Public License for more details.
#
# You should have received a copy of the GNU Affero General Public License
# along with this program.  If not, see <https://www.gnu.org/licenses/>.

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np

from ou_lab.utils.exceptions import InvalidParameter, UnknownForm


logger = logging.getLogger(__name__)

TAGS = ("smooth", "lipschitz", "bounded", "nonnegative", "linear", "discontinuous-approx", "constant", "exponential")


@dataclass(frozen=True)
class TestFunction:
    """f and grad f on points of shape (..., n).

    sup_norm is inf for unbounded members; lipschitz is None when grad f is unbounded.
    """
    __test__ = False

    eval: Callable
    grad: Callable
    label: str
    sup_norm: float = float("inf")
    lipschitz: Optional[float] = None
    tags: Tuple[str, ...] = field(default_factory=tuple)

    def __call__(self, xi):
        return self.eval(xi)

    def has(self, tag):
        return tag in self.tags

    def power(self, p):
        """|f|^p as a new test function (gradient p |f|^{p-1} sign(f) grad f)."""
        def evaluate(xi):
            return np.abs(self.eval(xi)) ** p

        def grad(xi):
            value = np.asarray(self.eval(xi), dtype=float)
            scale = p * np.abs(value) ** (p - 1.0) * np.sign(value) if p != 1 else np.sign(value)
            return scale[..., None] * self.grad(xi)

        return TestFunction(evaluate, grad, "|{}|^{:g}".format(self.label, p), sup_norm=self.sup_norm ** p,
                            tags=("nonnegative",))

    def grad_norm_power(self, p):
        """|grad f|^p; its own gradient is never used by the checks."""
        def evaluate(xi):
            return np.linalg.norm(self.grad(xi), axis=-1) ** p

        sup = self.lipschitz ** p if self.lipschitz is not None else float("inf")
        return TestFunction(evaluate, _no_gradient, "|D{}|^{:g}".format(self.label, p), sup_norm=sup,
                            tags=("nonnegative",))

    def compose(self, outer, label):
        """outer(f) for a scalar map outer; gradient not provided."""
        return TestFunction(lambda xi: outer(np.asarray(self.eval(xi), dtype=float)), _no_gradient,
                            "{}({})".format(label, self.label), tags=("nonnegative",))

    def times(self, other):
        def grad(xi):
            return (self.eval(xi)[..., None] * other.grad(xi) + other.eval(xi)[..., None] * self.grad(xi))

        return TestFunction(lambda xi: self.eval(xi) * other.eval(xi), grad,
                            "{}*{}".format(self.label, other.label), sup_norm=self.sup_norm * other.sup_norm)


def _no_gradient(xi):
    raise InvalidParameter("this derived test function has no gradient")


def _vec(a):
    return "[" + ",".join("{:g}".format(v) for v in a) + "]"


def _direction(dim, direction=None, axis=None):
    if direction is not None:
        a = np.asarray(direction, dtype=float)
        if a.shape != (dim,):
            raise InvalidParameter("direction needs {} entries, got {}".format(dim, a.shape))
        return a
    a = np.zeros(dim)
    a[int(axis or 0)] = 1.0
    return a


## Function families
def constant(dim, value=1.0):
    value = float(value)
    return TestFunction(lambda xi: np.full(np.shape(xi)[:-1], value),
                        lambda xi: np.zeros(np.shape(xi)),
                        "const({:g})".format(value), sup_norm=abs(value), lipschitz=0.0,
                        tags=("constant", "smooth", "bounded", "lipschitz") + (("nonnegative",) if value >= 0 else ()))


def linear(dim, direction=None, axis=0, offset=0.0):
    a = _direction(dim, direction, axis)
    return TestFunction(lambda xi: np.asarray(xi, dtype=float) @ a + offset,
                        lambda xi: np.broadcast_to(a, np.shape(xi)).copy(),
                        "lin({},{:g})".format(_vec(a), offset), lipschitz=float(np.linalg.norm(a)),
                        tags=("linear", "smooth", "lipschitz"))


def tanh(dim, direction=None, axis=0, steepness=1.0, shift=0.0):
    """tanh(k (<a, xi> - s)); large k approximates a jump."""
    a = _direction(dim, direction, axis)
    k = float(steepness)

    def grad(xi):
        z = k * (np.asarray(xi, dtype=float) @ a - shift)
        return (k / np.cosh(z) ** 2)[..., None] * a

    tags = ("smooth", "bounded", "lipschitz") + (("discontinuous-approx",) if k >= 10 else ())
    return TestFunction(lambda xi: np.tanh(k * (np.asarray(xi, dtype=float) @ a - shift)), grad,
                        "tanh({:g},{},{:g})".format(k, _vec(a), shift), sup_norm=1.0,
                        lipschitz=k * float(np.linalg.norm(a)), tags=tags)


def exponential(dim, direction=None, axis=0, rate=1.0):
    """e^{r <a, xi>}; the Gaussian exponential family of the entropy and hypercontractivity checks."""
    a = float(rate) * _direction(dim, direction, axis)

    def evaluate(xi):
        return np.exp(np.asarray(xi, dtype=float) @ a)

    return TestFunction(evaluate, lambda xi: evaluate(xi)[..., None] * a,
                        "exp({})".format(_vec(a)), tags=("smooth", "nonnegative", "exponential"))


def quadratic(dim, axis=None):
    """xi_axis^2, or |xi|^2 when axis is None."""
    if axis is None:
        return TestFunction(lambda xi: np.sum(np.asarray(xi, dtype=float) ** 2, axis=-1),
                            lambda xi: 2.0 * np.asarray(xi, dtype=float), "sq",
                            tags=("smooth", "nonnegative"))
    a = _direction(dim, axis=axis)
    return TestFunction(lambda xi: (np.asarray(xi, dtype=float) @ a) ** 2,
                        lambda xi: 2.0 * (np.asarray(xi, dtype=float) @ a)[..., None] * a,
                        "sq{}".format(int(axis)), tags=("smooth", "nonnegative"))


def cosine(dim, direction=None, axis=0, frequency=1.0, phase=0.0):
    a = float(frequency) * _direction(dim, direction, axis)
    return TestFunction(lambda xi: np.cos(np.asarray(xi, dtype=float) @ a + phase),
                        lambda xi: -np.sin(np.asarray(xi, dtype=float) @ a + phase)[..., None] * a,
                        "cos({},{:g})".format(_vec(a), phase), sup_norm=1.0, lipschitz=float(np.linalg.norm(a)),
                        tags=("smooth", "bounded", "lipschitz"))


def bump(dim, center=None, width=1.0):
    """exp(-|xi - c|^2 / (2 w^2))."""
    c = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
    w2 = float(width) ** 2

    def evaluate(xi):
        return np.exp(-np.sum((np.asarray(xi, dtype=float) - c) ** 2, axis=-1) / (2.0 * w2))

    return TestFunction(evaluate, lambda xi: -evaluate(xi)[..., None] * (np.asarray(xi, dtype=float) - c) / w2,
                        "bump({},{:g})".format(_vec(c), float(width)), sup_norm=1.0,
                        lipschitz=float(np.exp(-0.5) / np.sqrt(w2)),
                        tags=("smooth", "bounded", "lipschitz", "nonnegative"))


def softabs(dim, direction=None, axis=0, delta=0.1):
    """sqrt(<a, xi>^2 + delta^2): a smoothed |.|, Lipschitz and unbounded."""
    a = _direction(dim, direction, axis)

    def evaluate(xi):
        return np.sqrt((np.asarray(xi, dtype=float) @ a) ** 2 + delta ** 2)

    return TestFunction(evaluate, lambda xi: ((np.asarray(xi, dtype=float) @ a) / evaluate(xi))[..., None] * a,
                        "softabs({},{:g})".format(_vec(a), float(delta)), lipschitz=float(np.linalg.norm(a)),
                        tags=("smooth", "lipschitz", "nonnegative"))


FAMILIES = {
    "constant": constant,
    "linear": linear,
    "tanh": tanh,
    "exp": exponential,
    "quadratic": quadratic,
    "cos": cosine,
    "bump": bump,
    "softabs": softabs,
}


def make_function(kind, dim, label=None, **params):
    try:
        family = FAMILIES[kind.lower()]
    except KeyError:
        raise UnknownForm("UnknownForm: test function '{}' (known: {})".format(kind, ", ".join(sorted(FAMILIES))))
    try:
        f = family(dim, **params)
    except TypeError as err:
        raise InvalidParameter("bad parameters for test function '{}': {}".format(kind, err))
    if label is not None:
        f = TestFunction(f.eval, f.grad, label, f.sup_norm, f.lipschitz, f.tags)
    return f


def default_battery(dim):
    """Twenty bounded, Lipschitz or Gaussian-integrable members."""
    diagonal = np.ones(dim) / np.sqrt(dim)
    last = dim - 1
    battery = [
        constant(dim, 1.0),
        constant(dim, -0.5),
        linear(dim, axis=0),
        linear(dim, axis=last, offset=0.3),
        linear(dim, direction=diagonal, offset=-0.2),
        tanh(dim, axis=0, steepness=1.0),
        tanh(dim, axis=0, steepness=5.0),
        tanh(dim, axis=last, steepness=2.0, shift=0.5),
        tanh(dim, direction=diagonal, steepness=3.0),
        cosine(dim, axis=0, frequency=1.0),
        cosine(dim, axis=last, frequency=2.0, phase=0.4),
        cosine(dim, direction=diagonal, frequency=0.5),
        bump(dim, width=1.0),
        bump(dim, center=0.5 * np.ones(dim), width=0.7),
        bump(dim, width=2.0),
        softabs(dim, axis=0, delta=0.1),
        softabs(dim, direction=diagonal, delta=0.5),
        quadratic(dim, axis=0),
        exponential(dim, axis=0, rate=0.5),
        exponential(dim, direction=diagonal, rate=0.25),
    ]
    return battery
