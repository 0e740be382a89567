# Convex potentials, convex domains, projections, Moreau envelopes, the penalized
# potential, mollification and the eta schedule.
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
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from ou_lab.models.spectral_measure import GaussianModel, sample_gaussian
from ou_lab.utils.exceptions import (DimensionMismatch, InvalidParameter, ProjectionDidNotConverge,
                                     ProxDidNotConverge, QuadratureOrderTooLow, ScheduleInfeasible)
from ou_lab.utils.utils_general import derive_seed


logger = logging.getLogger(__name__)

PROX_TOL = 1e-10
PROX_TOL_QUASI_NEWTON = 1e-8
PROJECTION_TOL = 1e-12
MAX_SWEEPS = 10000
MIN_QUAD_ORDER = 4
MAX_QUAD_NODES = 200000
HESSIAN_FD_STEP = 1e-4


#######################
## Potentials
#######################

@dataclass(frozen=True)
class Potential:
    """A convex C^2 function on R^n, vectorized over leading axes.

    `eval` maps (..., n) -> (...), `grad` and `hessian_vec` map to (..., n).
    `prox(xi, eps)` is the closed-form minimizer of U(y) + |y - xi|^2 / (2 eps) when known.
    """
    eval: Callable
    grad: Callable
    label: str
    hessian_vec: Optional[Callable] = None
    prox: Optional[Callable] = None
    lipschitz_grad: Optional[float] = None

    def __call__(self, xi):
        return self.eval(xi)


def zero_potential():
    return Potential(eval=lambda xi: np.zeros(np.shape(xi)[:-1]),
                     grad=lambda xi: np.zeros(np.shape(xi)),
                     hessian_vec=lambda xi, w: np.zeros(np.broadcast(np.asarray(xi), np.asarray(w)).shape),
                     prox=lambda xi, eps: np.array(xi, dtype=float),
                     lipschitz_grad=0.0,
                     label="zero")


def quadratic_potential(weight=1.0, center=None):
    """U(xi) = weight/2 |xi - center|^2."""
    if weight < 0:
        raise InvalidParameter("quadratic weight must be >= 0")
    c = 0.0 if center is None else np.asarray(center, dtype=float)

    def prox(xi, eps):
        return (np.asarray(xi, dtype=float) + eps * weight * c) / (1.0 + eps * weight)

    return Potential(eval=lambda xi: 0.5 * weight * np.sum((np.asarray(xi) - c) ** 2, axis=-1),
                     grad=lambda xi: weight * (np.asarray(xi, dtype=float) - c),
                     hessian_vec=lambda xi, w: weight * np.asarray(w, dtype=float) + 0.0 * np.asarray(xi),
                     prox=prox, lipschitz_grad=float(weight),
                     label="quadratic(w={})".format(weight))


def linear_potential(vector, offset=0.0):
    a = np.asarray(vector, dtype=float)
    return Potential(eval=lambda xi: np.asarray(xi, dtype=float) @ a + offset,
                     grad=lambda xi: np.broadcast_to(a, np.shape(xi)).copy(),
                     hessian_vec=lambda xi, w: np.zeros(np.broadcast(np.asarray(xi), np.asarray(w)).shape),
                     prox=lambda xi, eps: np.asarray(xi, dtype=float) - eps * a,
                     lipschitz_grad=0.0,
                     label="linear")


def abs_potential(weight=1.0):
    """weight * |xi|_1; nonsmooth, prox by soft thresholding."""

    def prox(xi, eps):
        xi = np.asarray(xi, dtype=float)
        return np.sign(xi) * np.maximum(np.abs(xi) - eps * weight, 0.0)

    return Potential(eval=lambda xi: weight * np.sum(np.abs(xi), axis=-1),
                     grad=lambda xi: weight * np.sign(xi),
                     prox=prox, label="abs(w={})".format(weight))


def logcosh_potential(weight=1.0, scale=1.0):
    """weight * scale * sum log cosh(xi_i / scale): smooth, gradient bounded by weight."""
    if scale <= 0:
        raise InvalidParameter("logcosh scale must be > 0")

    def evaluate(xi):
        z = np.abs(np.asarray(xi, dtype=float)) / scale
        # log cosh z = z + log1p(exp(-2z)) - log 2, stable for large z
        return weight * scale * np.sum(z + np.log1p(np.exp(-2.0 * z)) - np.log(2.0), axis=-1)

    def hessian_vec(xi, w):
        return weight / scale / np.cosh(np.asarray(xi, dtype=float) / scale) ** 2 * np.asarray(w, dtype=float)

    return Potential(eval=evaluate,
                     grad=lambda xi: weight * np.tanh(np.asarray(xi, dtype=float) / scale),
                     hessian_vec=hessian_vec, lipschitz_grad=weight / scale,
                     label="logcosh(w={},s={})".format(weight, scale))


def sqdist_potential(domain):
    """d_Omega^2 / 2 with gradient xi - P(xi)."""

    def evaluate(xi):
        return 0.5 * domain_distance(domain, xi) ** 2

    def grad(xi):
        xi = np.asarray(xi, dtype=float)
        return xi - project_domain(domain, xi)

    def prox(xi, eps):
        xi = np.asarray(xi, dtype=float)
        return (xi + eps * project_domain(domain, xi)) / (1.0 + eps)

    return Potential(eval=evaluate, grad=grad, prox=prox, lipschitz_grad=1.0,
                     label="sqdist({})".format(domain.label))


#######################
## Domains
#######################

class ConvexDomain:
    """Closed convex set with a Euclidean projection, vectorized over leading axes."""
    label = "domain"

    def __init__(self, dim):
        self.dim = int(dim)

    def _check(self, xi):
        xi = np.asarray(xi, dtype=float)
        if xi.shape[-1] != self.dim:
            raise DimensionMismatch("{} lives in R^{}, got points of dimension {}".format(
                self.label, self.dim, xi.shape[-1]))
        return xi

    def project(self, xi):
        raise NotImplementedError

    def contains(self, xi, tol=1e-12):
        xi = self._check(xi)
        return np.linalg.norm(self.project(xi) - xi, axis=-1) <= tol

    def bounding_box(self):
        """(lower, upper) arrays, or None when unbounded in some direction."""
        return None


class FullSpace(ConvexDomain):
    label = "full"

    def project(self, xi):
        return np.array(self._check(xi), dtype=float)

    def contains(self, xi, tol=1e-12):
        return np.ones(np.shape(self._check(xi))[:-1], dtype=bool)


class HalfSpace(ConvexDomain):
    """{<a, xi> <= b}."""

    def __init__(self, normal, offset):
        normal = np.asarray(normal, dtype=float).ravel()
        if not np.any(normal != 0.0):
            raise InvalidParameter("half-space normal must be nonzero")
        super().__init__(normal.size)
        self.normal = normal
        self.offset = float(offset)
        self.label = "halfspace(a={},b={})".format(normal.tolist(), self.offset)

    def project(self, xi):
        xi = self._check(xi)
        excess = np.maximum(xi @ self.normal - self.offset, 0.0)
        return xi - (excess / (self.normal @ self.normal))[..., None] * self.normal

    def contains(self, xi, tol=1e-12):
        return self._check(xi) @ self.normal <= self.offset + tol * np.linalg.norm(self.normal)


class Ball(ConvexDomain):
    def __init__(self, center, radius):
        center = np.asarray(center, dtype=float).ravel()
        if not radius > 0:
            raise InvalidParameter("ball radius must be > 0, got {}".format(radius))
        super().__init__(center.size)
        self.center = center
        self.radius = float(radius)
        self.label = "ball(c={},r={})".format(center.tolist(), self.radius)

    def project(self, xi):
        xi = self._check(xi)
        offset = xi - self.center
        norm = np.linalg.norm(offset, axis=-1)
        scale = np.where(norm > self.radius, self.radius / np.maximum(norm, 1e-300), 1.0)
        return self.center + offset * scale[..., None]

    def contains(self, xi, tol=1e-12):
        return np.linalg.norm(self._check(xi) - self.center, axis=-1) <= self.radius + tol

    def bounding_box(self):
        return self.center - self.radius, self.center + self.radius


class Ellipsoid(ConvexDomain):
    """{sum_i ((xi_i - c_i) / a_i)^2 <= 1} with semi-axes a_i."""

    def __init__(self, center, semi_axes, max_iter=200):
        center = np.asarray(center, dtype=float).ravel()
        semi_axes = np.asarray(semi_axes, dtype=float).ravel()
        if semi_axes.shape != center.shape or np.any(semi_axes <= 0.0):
            raise InvalidParameter("ellipsoid needs one positive semi-axis per coordinate")
        super().__init__(center.size)
        self.center = center
        self.semi_axes = semi_axes
        self.max_iter = max_iter
        self.label = "ellipsoid(c={},a={})".format(center.tolist(), semi_axes.tolist())

    def contains(self, xi, tol=1e-12):
        z = (self._check(xi) - self.center) / self.semi_axes
        return np.sum(z ** 2, axis=-1) <= 1.0 + tol

    def project(self, xi):
        xi = self._check(xi)
        shape = xi.shape
        z = (xi - self.center).reshape(-1, self.dim)
        out = z.copy()
        outside = np.sum((z / self.semi_axes) ** 2, axis=1) > 1.0
        if np.any(outside):
            out[outside] = self._project_outside(z[outside])
        return (out + self.center).reshape(shape)

    def _project_outside(self, z):
        # Multiplier equation g(mu) = sum a^2 z^2 / (a^2 + mu)^2 - 1, decreasing on [0, hi]
        a2 = self.semi_axes ** 2
        az2 = a2 * z ** 2
        lo = np.zeros(len(z))
        hi = np.sqrt(np.sum(az2, axis=1))
        mu = 0.5 * hi
        for _ in range(self.max_iter):
            denom = a2 + mu[:, None]
            g = np.sum(az2 / denom ** 2, axis=1) - 1.0
            dg = -2.0 * np.sum(az2 / denom ** 3, axis=1)
            lo = np.where(g > 0.0, mu, lo)
            hi = np.where(g > 0.0, hi, mu)
            newton = mu - g / dg
            bad = ~((newton > lo) & (newton < hi))
            new_mu = np.where(bad, 0.5 * (lo + hi), newton)
            converged = np.abs(new_mu - mu) <= 1e-14 * (1.0 + mu)
            mu = new_mu
            if np.all(converged | (np.abs(g) < 1e-15)):
                return a2 * z / (a2 + mu[:, None])
        raise ProjectionDidNotConverge("ellipsoid multiplier search did not converge in {} iterations".format(
            self.max_iter))

    def bounding_box(self):
        return self.center - self.semi_axes, self.center + self.semi_axes


class Sublevel(ConvexDomain):
    """{G <= level} for a convex Potential G; projected pointwise by SLSQP."""

    def __init__(self, function, dim, tol=PROJECTION_TOL, level=0.0):
        super().__init__(dim)
        self.function = function
        self.tol = tol
        self.level = float(level)
        self.label = "sublevel({}<={:g})".format(function.label, self.level)

    def contains(self, xi, tol=1e-12):
        return self.function.eval(self._check(xi)) - self.level <= tol

    def project(self, xi):
        xi = self._check(xi)
        flat = xi.reshape(-1, self.dim)
        out = flat.copy()
        values = self.function.eval(flat)
        for i in np.flatnonzero(values > self.level):
            out[i] = self._project_point(flat[i])
        return out.reshape(xi.shape)

    def _project_point(self, x):
        constraint = {"type": "ineq",
                      "fun": lambda y: self.level - float(self.function.eval(y)),
                      "jac": lambda y: -np.asarray(self.function.grad(y), dtype=float)}
        result = optimize.minimize(lambda y: 0.5 * float(np.sum((y - x) ** 2)), x, jac=lambda y: y - x,
                                   method="SLSQP", constraints=[constraint],
                                   options={"ftol": self.tol, "maxiter": 500})
        if not result.success or self.function.eval(result.x) - self.level > 1e-8:
            raise ProjectionDidNotConverge("SLSQP projection onto {} failed: {}".format(self.label, result.message))
        return result.x


class Intersection(ConvexDomain):
    """Intersection of convex domains, projected by Dykstra's alternating scheme."""

    def __init__(self, domains, tol=PROJECTION_TOL, max_sweeps=MAX_SWEEPS):
        domains = list(domains)
        if not domains:
            raise InvalidParameter("intersection of zero domains")
        dims = {d.dim for d in domains}
        if len(dims) != 1:
            raise DimensionMismatch("intersected domains have dimensions {}".format(sorted(dims)))
        super().__init__(dims.pop())
        self.domains = domains
        self.tol = tol
        self.max_sweeps = max_sweeps
        self.label = "intersection({})".format(", ".join(d.label for d in domains))

    def contains(self, xi, tol=1e-12):
        xi = self._check(xi)
        inside = np.ones(xi.shape[:-1], dtype=bool)
        for domain in self.domains:
            inside &= domain.contains(xi, tol)
        return inside

    def project(self, xi):
        xi = self._check(xi)
        x = np.array(xi, dtype=float)
        increments = [np.zeros_like(x) for _ in self.domains]
        for sweep in range(self.max_sweeps):
            previous = x.copy()
            for k, domain in enumerate(self.domains):
                shifted = x + increments[k]
                x = domain.project(shifted)
                increments[k] = shifted - x
            change = np.max(np.abs(x - previous) / (1.0 + np.abs(x))) if x.size else 0.0
            if change < self.tol:
                logger.debug("Dykstra converged after {} sweeps".format(sweep + 1))
                return x
        raise ProjectionDidNotConverge("Dykstra did not converge in {} sweeps".format(self.max_sweeps))

    def bounding_box(self):
        boxes = [d.bounding_box() for d in self.domains if d.bounding_box() is not None]
        if not boxes:
            return None
        lower = np.max([b[0] for b in boxes], axis=0)
        upper = np.min([b[1] for b in boxes], axis=0)
        return lower, upper


def project_domain(domain, xi):
    xi = np.asarray(xi, dtype=float)
    if not np.all(np.isfinite(xi)):
        raise InvalidParameter("cannot project non-finite points")
    return domain.project(xi)


def domain_distance(domain, xi):
    xi = np.asarray(xi, dtype=float)
    return np.linalg.norm(xi - project_domain(domain, xi), axis=-1)


#######################
## Moreau envelopes
#######################

@dataclass(frozen=True)
class MoreauResult:
    value: np.ndarray
    gradient: np.ndarray
    minimizer: np.ndarray   # h* = prox(xi) - xi


def _newton_prox(f, eps, xi, tol=PROX_TOL, max_iter=100):
    """Damped Newton on y -> f(y) + |y - xi|^2 / (2 eps) for a batch of points (m, n).

    Stops once |g| < tol (1 + |xi| / eps) at every point, g the gradient of the objective; the
    minimizer is then within eps |g| of y.
    """
    m, n = xi.shape
    y = xi.copy()
    eye = np.eye(n)
    threshold = tol * (1.0 + np.linalg.norm(xi, axis=1) / eps)

    def objective(y):
        return f.eval(y) + np.sum((y - xi) ** 2, axis=1) / (2.0 * eps)

    for _ in range(max_iter):
        g = f.grad(y) + (y - xi) / eps
        gnorm = np.linalg.norm(g, axis=1)
        if np.all(gnorm < threshold):
            return y
        hessian = np.stack([f.hessian_vec(y, np.broadcast_to(eye[j], y.shape)) for j in range(n)], axis=-1)
        hessian = hessian + eye / eps
        direction = -np.linalg.solve(hessian, g[..., None])[..., 0]
        step = np.ones(m)
        current = objective(y)
        slope = np.sum(g * direction, axis=1)
        for _ in range(40):
            candidate = y + step[:, None] * direction
            accept = objective(candidate) <= current + 1e-4 * step * slope + 1e-15 * (1.0 + np.abs(current))
            if np.all(accept):
                break
            step = np.where(accept, step, 0.5 * step)
        y = np.where((gnorm < threshold)[:, None], y, y + step[:, None] * direction)
    g = f.grad(y) + (y - xi) / eps
    if np.all(np.linalg.norm(g, axis=1) < threshold):
        return y
    raise ProxDidNotConverge("Newton prox for {} stopped at gradient norm {:.3e}".format(
        f.label, float(np.max(np.linalg.norm(g, axis=1)))))


def _quasi_newton_prox(f, eps, xi, tol=PROX_TOL_QUASI_NEWTON):
    out = np.empty_like(xi)
    for i, x in enumerate(xi):
        result = optimize.minimize(lambda y: float(f.eval(y)) + float(np.sum((y - x) ** 2)) / (2.0 * eps), x,
                                   jac=lambda y: np.asarray(f.grad(y), dtype=float) + (y - x) / eps,
                                   method="L-BFGS-B", options={"gtol": 1e-12, "ftol": 1e-15, "maxiter": 2000})
        residual = np.linalg.norm(np.asarray(f.grad(result.x)) + (result.x - x) / eps)
        if residual > tol * (1.0 + np.linalg.norm(x) / eps):
            raise ProxDidNotConverge("L-BFGS-B prox for {} stopped at gradient norm {:.3e}".format(
                f.label, residual))
        out[i] = result.x
    return out


def proximal_point(f, eps, xi):
    """argmin_y f(y) + |y - xi|^2 / (2 eps): closed form, else Newton, else L-BFGS-B."""
    xi = np.asarray(xi, dtype=float)
    if f.prox is not None:
        return np.asarray(f.prox(xi, eps), dtype=float)
    flat = xi.reshape(-1, xi.shape[-1])
    if f.hessian_vec is not None:
        y = _newton_prox(f, eps, flat)
    else:
        y = _quasi_newton_prox(f, eps, flat)
    return y.reshape(xi.shape)


def moreau_envelope(f, eps, xi):
    if not eps > 0:
        raise InvalidParameter("epsilon must be > 0, got {}".format(eps))
    xi = np.asarray(xi, dtype=float)
    y = proximal_point(f, eps, xi)
    h = y - xi
    value = f.eval(y) + np.sum(h ** 2, axis=-1) / (2.0 * eps)
    return MoreauResult(value=value, gradient=-h / eps, minimizer=h)


#######################
## Penalized scene
#######################

@dataclass(frozen=True)
class PenalizedScene:
    potential: Potential
    domain: ConvexDomain
    epsilon: float
    model: GaussianModel
    eta_schedule: Tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InvalidParameter("epsilon must be > 0, got {}".format(self.epsilon))
        if self.domain.dim != self.model.dim:
            raise DimensionMismatch("domain dimension {} != model dimension {}".format(
                self.domain.dim, self.model.dim))
        eta = np.asarray(self.eta_schedule, dtype=float)
        if eta.size and (np.any(eta <= 0.0) or np.any(np.diff(eta) >= 0.0)):
            raise InvalidParameter("eta schedule must be positive and strictly decreasing")

    def with_epsilon(self, epsilon):
        return PenalizedScene(self.potential, self.domain, epsilon, self.model, self.eta_schedule)

    @property
    def eta(self):
        """The mollification radius used by the solvers: the last entry of the schedule, or None."""
        return float(self.eta_schedule[-1]) if self.eta_schedule else None

    def as_potential(self, quad_order=8):
        """Phi_eps packaged as a Potential for the grid solver, mollified to Phi_eps * rho_eta when
        the scene carries an eta schedule.
        """
        penalized = Potential(eval=lambda xi: penalized_potential(self, xi)[0],
                              grad=lambda xi: penalized_potential(self, xi)[1],
                              lipschitz_grad=self.gradient_lipschitz_bound(),
                              label="penalized({}, {}, eps={})".format(self.potential.label, self.domain.label,
                                                                        self.epsilon))
        if self.eta is None:
            return penalized
        nodes, weights = bump_quadrature(self.model.dim, quad_order)

        def mollified(xi):
            return _mollify_with(penalized, self.eta, np.asarray(xi, dtype=float), nodes, weights)

        return Potential(eval=lambda xi: mollified(xi)[0], grad=lambda xi: mollified(xi)[1],
                         lipschitz_grad=penalized.lipschitz_grad,
                         label="{}*rho(eta={:g})".format(penalized.label, self.eta))

    def mollification_bound(self, lipschitz_f, t):
        """sup |T_eps(t)f - T_{eps,eta}(t)f| <= t L eta Lip(f), L the Lipschitz constant of grad Phi_eps:
        the drifts differ by at most L eta and |grad T(s)f| <= Lip(f).
        """
        if self.eta is None:
            return 0.0
        return float(t) * self.gradient_lipschitz_bound() * self.eta * float(lipschitz_f)

    def gradient_lipschitz_bound(self):
        """1/eps from the distance term plus the Lipschitz constant of grad U_eps (at most 1/eps)."""
        envelope = 1.0 / self.epsilon
        if self.potential.lipschitz_grad is not None:
            envelope = min(envelope, self.potential.lipschitz_grad)
        return 1.0 / self.epsilon + envelope


def penalized_potential(scene, xi):
    """Phi_eps = U_eps + d_Omega^2 / (2 eps) and its gradient."""
    xi = np.asarray(xi, dtype=float)
    envelope = moreau_envelope(scene.potential, scene.epsilon, xi)
    offset = xi - project_domain(scene.domain, xi)
    value = envelope.value + np.sum(offset ** 2, axis=-1) / (2.0 * scene.epsilon)
    gradient = envelope.gradient + offset / scene.epsilon
    return value, gradient


#######################
## Mollification
#######################

@dataclass(frozen=True)
class MollifiedValue:
    value: np.ndarray
    gradient: np.ndarray
    error_bound: float


def bump_quadrature(dim, order):
    """Tensor Gauss-Legendre nodes in the unit ball weighted by exp(-1/(1-|u|^2)), unit total mass."""
    if order < MIN_QUAD_ORDER or order ** dim > MAX_QUAD_NODES:
        raise QuadratureOrderTooLow("quad_order={} in dimension {} is outside [{}, {}^(1/n)]".format(
            order, dim, MIN_QUAD_ORDER, MAX_QUAD_NODES))
    nodes_1d, weights_1d = np.polynomial.legendre.leggauss(order)
    grids = np.meshgrid(*([nodes_1d] * dim), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    weights = np.prod(np.stack(np.meshgrid(*([weights_1d] * dim), indexing="ij"), axis=0).reshape(dim, -1), axis=0)
    r2 = np.sum(nodes ** 2, axis=1)
    inside = r2 < 1.0
    bump = np.zeros_like(r2)
    bump[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    weights = weights * bump
    return nodes[inside], weights[inside] / np.sum(weights[inside])


def _mollify_with(phi, eta, xi, nodes, weights):
    points = xi[..., None, :] + eta * nodes
    value = np.tensordot(np.asarray(phi.eval(points)), weights, axes=([-1], [0]))
    gradient = np.einsum("...kj,k->...j", np.asarray(phi.grad(points)), weights)
    return value, gradient


def mollify_potential(phi, eta, xi, quad_order=8):
    """(phi * rho_eta)(xi) and its gradient, rho the normalized compact bump scaled to eta."""
    if not eta > 0:
        raise InvalidParameter("eta must be > 0, got {}".format(eta))
    xi = np.asarray(xi, dtype=float)
    dim = xi.shape[-1]
    nodes, weights = bump_quadrature(dim, quad_order)
    value, gradient = _mollify_with(phi, eta, xi, nodes, weights)
    if quad_order - 2 >= MIN_QUAD_ORDER:
        low_nodes, low_weights = bump_quadrature(dim, quad_order - 2)
        low_value, low_gradient = _mollify_with(phi, eta, xi, low_nodes, low_weights)
        error = float(max(np.max(np.abs(value - low_value)), np.max(np.abs(gradient - low_gradient))))
    else:
        error = float("inf")
    return MollifiedValue(value=value, gradient=gradient, error_bound=error)


#######################
## eta schedule
#######################

def _fd_hessian(gradient, points, step=HESSIAN_FD_STEP):
    m, n = points.shape
    columns = []
    for j in range(n):
        shift = np.zeros(n)
        shift[j] = step
        columns.append((gradient(points + shift) - gradient(points - shift)) / (2.0 * step))
    return np.stack(columns, axis=-1)


def _truncated_gradient(scene, n, tails):
    """Gradient in the first n coordinates of E_n Phi_eps, tails shared across calls."""
    N = scene.model.dim

    def gradient(points):
        m = len(points)
        if n == N:
            return penalized_potential(scene, points)[1]
        full = np.empty((m, len(tails), N))
        full[:, :, :n] = points[:, None, :]
        full[:, :, n:] = tails[None, :, :]
        return penalized_potential(scene, full)[1][:, :, :n].mean(axis=1)

    return gradient


def eta_schedule(scene, n_list, mc_samples, seed, eta_max=1.0, tail_samples=32, quad_order=8, max_halvings=30,
                 bisections=6):
    """Largest eta, up to a bisection tolerance, whose nu_eps-averaged Frobenius distance of the Hessians is below 2^-n.

    Eta is halved from eta_max until the distance passes, then bisected between the passing and the last failing
    value. Each level starts below half the previous entry, so the schedule strictly decreases.
    """
    n_list = [int(n) for n in n_list]
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise InvalidParameter("n_list must be increasing")
    N = scene.model.dim
    if n_list and (n_list[0] < 1 or n_list[-1] > N):
        raise DimensionMismatch("n_list must lie in [1, {}]".format(N))

    outer = sample_gaussian(scene.model, mc_samples, derive_seed(seed, "outer")).points
    weights = np.exp(-penalized_potential(scene, outer)[0])
    weights = weights / np.sum(weights)

    schedule = []
    start = float(eta_max)
    for n in n_list:
        tails = sample_gaussian(scene.model, tail_samples, derive_seed(seed, ("tail", n))).points[:, n:]
        gradient = _truncated_gradient(scene, n, tails)
        points = outer[:, :n]
        exact = _fd_hessian(gradient, points)
        nodes, quad_weights = bump_quadrature(n, quad_order)
        target = 2.0 ** (-n)

        def hessian_gap(eta):
            def mollified(x):
                shifted = (x[:, None, :] + eta * nodes).reshape(-1, n)
                return np.einsum("mkj,k->mj", gradient(shifted).reshape(len(x), len(nodes), n), quad_weights)

            smooth = _fd_hessian(mollified, points)
            gap = float(np.sum(weights * np.linalg.norm(exact - smooth, axis=(1, 2))))
            logger.debug("eta schedule n={} eta={:.4g} gap={:.4g}".format(n, eta, gap))
            return gap

        eta, gap = start, hessian_gap(start)
        halvings = 0
        while gap >= target:
            if halvings == max_halvings:
                raise ScheduleInfeasible("no eta >= {:.3g} reaches tolerance 2^-{} (last gap {:.3g})".format(
                    eta, n, gap))
            eta *= 0.5
            halvings += 1
            gap = hessian_gap(eta)
        if halvings:
            # [eta, 2 eta] brackets the switch from failing to passing
            low, high = eta, 2.0 * eta
            for _ in range(bisections):
                middle = 0.5 * (low + high)
                if hessian_gap(middle) < target:
                    low = middle
                else:
                    high = middle
            eta = low
        schedule.append(eta)
        start = 0.5 * eta
    logger.info("eta schedule for n={}: {}".format(n_list, schedule))
    return schedule


#######################
## Property helpers
#######################

def check_midpoint_convexity(potential, a, b):
    ua, ub = potential.eval(a), potential.eval(b)
    mid = potential.eval(0.5 * (np.asarray(a) + np.asarray(b)))
    return mid <= 0.5 * (ua + ub) + 1e-10 * (1.0 + np.abs(ua) + np.abs(ub))


def gradient_consistency_error(potential, points, step=1e-5):
    """max |central FD of eval - grad| over the points."""
    points = np.asarray(points, dtype=float)
    fd = np.empty_like(points)
    for j in range(points.shape[-1]):
        shift = np.zeros(points.shape[-1])
        shift[j] = step
        fd[..., j] = (potential.eval(points + shift) - potential.eval(points - shift)) / (2.0 * step)
    return float(np.max(np.abs(fd - potential.grad(points))))


def check_gradient_consistency(potential, points, tol=1e-5, step=1e-5):
    return gradient_consistency_error(potential, points, step) <= tol * (1.0 + float(np.max(np.abs(points))))


def check_firm_nonexpansive(domain, x, z, tol=1e-10):
    px, pz = project_domain(domain, x), project_domain(domain, z)
    diff = px - pz
    return np.sum(diff ** 2, axis=-1) <= np.sum(diff * (np.asarray(x) - np.asarray(z)), axis=-1) + tol


def check_gradient_lipschitz(domain, x, h, tol=1e-10):
    """|grad d^2(x + h) - grad d^2(x)| <= 2 |h| with grad d^2 = 2 (x - P x)."""
    x = np.asarray(x, dtype=float)
    h = np.asarray(h, dtype=float)
    g0 = 2.0 * (x - project_domain(domain, x))
    g1 = 2.0 * (x + h - project_domain(domain, x + h))
    return np.linalg.norm(g1 - g0, axis=-1) <= 2.0 * np.linalg.norm(h, axis=-1) + tol


def make_domain(kind, dim, **params):
    kind = kind.lower()
    if kind == "full":
        return FullSpace(dim)
    if kind == "halfspace":
        return HalfSpace(params["normal"], params.get("offset", 0.0))
    if kind == "ball":
        return Ball(params.get("center", np.zeros(dim)), params["radius"])
    if kind == "ellipsoid":
        return Ellipsoid(params.get("center", np.zeros(dim)), params["semi_axes"])
    if kind == "intersection":
        return Intersection(params["parts"])
    if kind == "sublevel":
        return Sublevel(params["function"], dim, level=params.get("level", 0.0))
    raise InvalidParameter("unknown domain kind '{}'".format(kind))


def make_potential(kind, dim, **params):
    kind = kind.lower()
    if kind == "zero":
        return zero_potential()
    if kind == "quadratic":
        return quadratic_potential(params.get("weight", 1.0), params.get("center"))
    if kind == "linear":
        return linear_potential(params["vector"], params.get("offset", 0.0))
    if kind == "abs":
        return abs_potential(params.get("weight", 1.0))
    if kind == "logcosh":
        return logcosh_potential(params.get("weight", 1.0), params.get("scale", 1.0))
    if kind == "sqdist":
        return sqdist_potential(params["domain"])
    raise InvalidParameter("unknown potential kind '{}'".format(kind))
