# Closed-form ground truths: the 1-D Mehler semigroup, Gaussian moments and
# convex-analysis formulas.
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
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import Polynomial
from scipy import integrate, stats

from ou_lab.utils.exceptions import InvalidParameter, QuadratureFailure, UnknownForm


logger = logging.getLogger(__name__)

QUAD_HALF_WIDTH = 8.0


@dataclass(frozen=True)
class MehlerOU:
    lambda1: float

    def __post_init__(self):
        if not self.lambda1 > 0:
            raise InvalidParameter("lambda1 must be > 0")

    def contraction(self, t):
        return np.exp(-t / self.lambda1)

    def noise_sd(self, t):
        return np.sqrt(self.lambda1 * -np.expm1(-2.0 * t / self.lambda1))

    def truncation_bound(self, sup_f):
        """Mass outside +-8 standard deviations times sup|f|."""
        return 2.0 * stats.norm.sf(QUAD_HALF_WIDTH) * sup_f


def _gaussian_moment(k):
    """E Z^k for standard normal Z."""
    if k % 2:
        return 0.0
    return float(np.prod(np.arange(k - 1, 0, -2))) if k else 1.0


def _polynomial_expectation(poly, mean, sd):
    shifted = poly(Polynomial([mean, sd]))
    return sum(c * _gaussian_moment(k) for k, c in enumerate(shifted.coef))


def _quad_expectation(f, mean, sd):
    density = stats.norm.pdf
    out = integrate.quad(lambda z: float(f(mean + sd * z)) * density(z), -QUAD_HALF_WIDTH, QUAD_HALF_WIDTH,
                         epsabs=1e-12, epsrel=1e-10, limit=200, full_output=1)
    if len(out) > 3:
        raise QuadratureFailure("Mehler quadrature failed at mean={:.4g}: {}".format(mean, out[3]))
    value, error = out[0], out[1]
    if error > 1e-8:
        raise QuadratureFailure("Mehler quadrature error estimate {:.3e} too large".format(error))
    return value


def mehler_apply(oracle, f, t, xi):
    """T(t)f(xi) = E f(e^{-t/lambda1} xi + sqrt(lambda1 (1 - e^{-2t/lambda1})) Z).

    Polynomials (numpy Polynomial) are integrated exactly through Gaussian moments, other
    callables by adaptive Gauss-Kronrod on +-8 standard deviations.
    """
    if t < 0:
        raise InvalidParameter("t must be >= 0")
    xi = np.asarray(xi, dtype=float)
    if t == 0:
        return np.asarray(f(xi), dtype=float) if xi.ndim else float(f(xi))
    means = oracle.contraction(t) * np.atleast_1d(xi)
    sd = oracle.noise_sd(t)
    if isinstance(f, Polynomial):
        values = np.array([_polynomial_expectation(f, m, sd) for m in means])
    else:
        values = np.array([_quad_expectation(f, m, sd) for m in means])
    return values.reshape(xi.shape) if xi.ndim else float(values[0])


def mehler_gradient(oracle, f_prime, t, xi):
    """d/dxi T(t)f = e^{-t/lambda1} T(t) f'."""
    return oracle.contraction(t) * mehler_apply(oracle, f_prime, t, xi)


## Closed forms
def huber(eps, x):
    x = np.asarray(x, dtype=float)
    return np.where(np.abs(x) <= eps, x ** 2 / (2.0 * eps), np.abs(x) - eps / 2.0)


def halfspace_distance(normal, offset, x):
    normal = np.asarray(normal, dtype=float)
    return np.maximum(np.asarray(x, dtype=float) @ normal - offset, 0.0) / np.linalg.norm(normal)


def quadratic_moreau(eps, x, weight=1.0):
    """Moreau envelope of weight/2 |x|^2 at a scalar or a single point x."""
    x = np.asarray(x, dtype=float)
    squared = np.sum(x ** 2, axis=-1) if x.ndim else x ** 2
    return weight * squared / (2.0 * (1.0 + eps * weight))


def halfnormal_mean(lam):
    return np.sqrt(2.0 * lam / np.pi)


def gaussian_exp_moment(a, lam):
    """E e^{a xi} for xi ~ N(0, lam)."""
    return np.exp(a ** 2 * lam / 2.0)


def gaussian_exp_lp_norm(a, lam, p):
    """||e^{a xi}||_{L^p(N(0, lam))} = e^{p a^2 lam / 2}."""
    return np.exp(p * a ** 2 * lam / 2.0)


def mehler_exp_lp_norm(a, lam, t, p):
    """||T(t) e^{a xi}||_{L^p(N(0, lam))} for the OU semigroup with lambda1 = lam."""
    c = np.exp(-t / lam)
    return np.exp(a ** 2 * lam * (1.0 - c ** 2) / 2.0) * gaussian_exp_lp_norm(a * c, lam, p)


def ball_projection(center, radius, x):
    center = np.asarray(center, dtype=float)
    offset = np.asarray(x, dtype=float) - center
    norm = np.linalg.norm(offset)
    return center + offset * (radius / norm if norm > radius else 1.0)


def normal_interval_mass(lam, lower, upper):
    sd = np.sqrt(lam)
    return stats.norm.cdf(upper / sd) - stats.norm.cdf(lower / sd)


def mehler_second_moment(lam, t, x):
    c2 = np.exp(-2.0 * t / lam)
    return c2 * np.asarray(x, dtype=float) ** 2 + lam * (1.0 - c2)


CLOSED_FORMS = {
    "huber": huber,
    "halfspace_distance": halfspace_distance,
    "quadratic_moreau": quadratic_moreau,
    "halfnormal_mean": halfnormal_mean,
    "gaussian_exp_moment": gaussian_exp_moment,
    "gaussian_exp_lp_norm": gaussian_exp_lp_norm,
    "mehler_exp_lp_norm": mehler_exp_lp_norm,
    "ball_projection": ball_projection,
    "normal_interval_mass": normal_interval_mass,
    "mehler_second_moment": mehler_second_moment,
}


def closed_forms(name, **params):
    try:
        form = CLOSED_FORMS[name]
    except KeyError:
        raise UnknownForm("UnknownForm: '{}' (known: {})".format(name, ", ".join(sorted(CLOSED_FORMS))))
    return form(**params)
