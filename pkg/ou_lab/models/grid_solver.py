# Finite-difference solver for the Kolmogorov equation D_t v = L_phi v on a box (n <= 2),
# the elliptic resolvent by Laplace quadrature and the Lyapunov constant.
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

import math
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import pandas as pd
from scipy import interpolate, optimize, sparse
from scipy.sparse.linalg import splu
from tqdm import tqdm

from ou_lab.utils.exceptions import (DimensionMismatch, InvalidParameter, PecletError,
                                     QuadratureBudgetExceeded, UnstableStep)
from ou_lab.utils.utils_general import progress_disabled


logger = logging.getLogger(__name__)

SCHEMES = ("crank_nicolson", "implicit_euler")
MAX_GRID_DIM = 2
MAX_STEPS = 2000000
MONITOR_TOL = 1e-10
COVERAGE_SIGMAS = 4.0


@dataclass(frozen=True)
class GridSpec:
    """Node-centred tensor grid on [lower, upper] with an odd number of nodes per axis."""
    lower: Tuple[float, ...]
    upper: Tuple[float, ...]
    nodes: Tuple[int, ...]
    dt: float
    scheme: str = "crank_nicolson"
    rannacher_steps: int = 4
    max_peclet: float = 50.0

    def __post_init__(self):
        if not len(self.lower) == len(self.upper) == len(self.nodes):
            raise DimensionMismatch("lower, upper and nodes need one entry per axis")
        if any(u <= l for l, u in zip(self.lower, self.upper)):
            raise InvalidParameter("every axis needs upper > lower")
        if any(n < 5 or n % 2 == 0 for n in self.nodes):
            raise InvalidParameter("nodes per axis must be odd and >= 5, got {}".format(self.nodes))
        if not self.dt > 0:
            raise UnstableStep("time step must be > 0, got {}".format(self.dt))
        if self.scheme not in SCHEMES:
            raise InvalidParameter("unknown scheme '{}' (use one of {})".format(self.scheme, SCHEMES))

    @classmethod
    def symmetric(cls, half_widths, nodes, dt, **kwargs):
        half_widths = tuple(float(r) for r in np.atleast_1d(half_widths))
        nodes = tuple(int(n) for n in np.broadcast_to(nodes, (len(half_widths),)))
        return cls(tuple(-r for r in half_widths), half_widths, nodes, dt, **kwargs)

    @classmethod
    def for_model(cls, model, nodes, dt, width=7.0, domain=None, **kwargs):
        """Symmetric box of half-width max(width sqrt(lambda_i), coverage rule)."""
        sd = np.sqrt(model.lambdas)
        half = width * sd
        box = domain.bounding_box() if domain is not None else None
        if box is not None:
            extent = np.maximum(np.abs(box[0]), np.abs(box[1]))
            half = np.maximum(half, COVERAGE_SIGMAS * sd + extent)
        return cls.symmetric(half, nodes, dt, **kwargs)

    @property
    def dim(self):
        return len(self.nodes)

    @property
    def shape(self):
        return tuple(self.nodes)

    @property
    def spacing(self):
        return tuple((u - l) / (n - 1) for l, u, n in zip(self.lower, self.upper, self.nodes))

    def axes(self):
        return [np.linspace(l, u, n) for l, u, n in zip(self.lower, self.upper, self.nodes)]

    def points(self):
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def cell_volumes(self):
        """Trapezoid weights on the tensor grid."""
        weights = []
        for h, n in zip(self.spacing, self.nodes):
            w = np.full(n, h)
            w[0] = w[-1] = 0.5 * h
            weights.append(w)
        out = weights[0]
        for w in weights[1:]:
            out = np.multiply.outer(out, w)
        return out

    def coarsened(self):
        return GridSpec(self.lower, self.upper, tuple((n + 1) // 2 for n in self.nodes), 2.0 * self.dt,
                        self.scheme, self.rannacher_steps, self.max_peclet)

    def covers(self, model, domain=None):
        sd = np.sqrt(model.lambdas)
        need = COVERAGE_SIGMAS * sd
        box = domain.bounding_box() if domain is not None else None
        if box is not None:
            need = need + np.maximum(np.abs(box[0]), np.abs(box[1]))
        half = 0.5 * (np.asarray(self.upper) - np.asarray(self.lower))
        return bool(np.all(half >= need))

    def coarse_slices(self):
        return tuple(slice(None, None, 2) for _ in self.nodes)


## Operator assembly
def _drift(model, phi, points):
    drift = model.linear_drift(points)
    if phi is not None:
        drift = drift - np.asarray(phi.grad(points), dtype=float)
    return drift


def assemble_generator(grid, model, phi=None):
    """Sparse L_phi = Delta + <B xi - grad phi, grad> with reflecting (Neumann) box walls.

    Central differences, switched to first-order upwind on nodes whose cell Peclet number
    |b| h / 2 exceeds one; every off-diagonal entry is nonnegative and rows sum to zero.
    """
    points = grid.points()
    drift = _drift(model, phi, points)
    if not np.all(np.isfinite(drift)):
        raise PecletError("drift is not finite on the grid")
    shape = grid.shape
    size = int(np.prod(shape))
    index = np.arange(size)
    multi = np.indices(shape).reshape(grid.dim, -1)
    rows, cols, vals = [], [], []
    peclet_max, upwind = 0.0, np.zeros(size, dtype=bool)
    for k, (h, n) in enumerate(zip(grid.spacing, grid.nodes)):
        stride = int(np.prod(shape[k + 1:]))
        b = drift[:, k]
        i = multi[k]
        peclet = np.abs(b) * h / 2.0
        peclet_max = max(peclet_max, float(np.max(peclet)))
        use_upwind = peclet > 1.0
        upwind |= use_upwind

        lo = 1.0 / h ** 2 - b / (2.0 * h)
        up = 1.0 / h ** 2 + b / (2.0 * h)
        dg = np.full(size, -2.0 / h ** 2)
        pos, neg = use_upwind & (b > 0), use_upwind & (b <= 0)
        lo = np.where(pos, 1.0 / h ** 2, np.where(neg, 1.0 / h ** 2 - b / h, lo))
        up = np.where(pos, 1.0 / h ** 2 + b / h, np.where(neg, 1.0 / h ** 2, up))
        dg = np.where(pos, -2.0 / h ** 2 - b / h, np.where(neg, -2.0 / h ** 2 + b / h, dg))
        # ghost node reflection: the drift term vanishes on the walls
        first, last = i == 0, i == n - 1
        lo = np.where(first, 0.0, np.where(last, 2.0 / h ** 2, lo))
        up = np.where(last, 0.0, np.where(first, 2.0 / h ** 2, up))
        dg = np.where(first | last, -2.0 / h ** 2, dg)

        has_lo, has_up = i > 0, i < n - 1
        rows += [index, index[has_lo], index[has_up]]
        cols += [index, index[has_lo] - stride, index[has_up] + stride]
        vals += [dg, lo[has_lo], up[has_up]]
    if peclet_max > grid.max_peclet:
        raise PecletError("cell Peclet number {:.1f} exceeds {}: refine the grid".format(peclet_max, grid.max_peclet))
    generator = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                  shape=(size, size))
    fraction = float(np.mean(upwind))
    if fraction > 0:
        logger.warning("Upwinding active on {:.1%} of the nodes (max Peclet {:.2f})".format(fraction, peclet_max))
    return generator, peclet_max, fraction


## Time marching
class _Stepper:
    """Sparse LU factorizations cached per (method, step length)."""

    def __init__(self, generator):
        self.generator = generator.tocsc()
        self.identity = sparse.identity(generator.shape[0], format="csc")
        self._cache = {}

    def step(self, u, method, k):
        key = (method, float(k))
        if key not in self._cache:
            if method == "ie":
                self._cache[key] = (splu(self.identity - k * self.generator), None)
            else:
                self._cache[key] = (splu(self.identity - 0.5 * k * self.generator),
                                    self.identity + 0.5 * k * self.generator)
        lu, rhs = self._cache[key]
        return lu.solve(u if rhs is None else rhs @ u)


def _step_plan(times, max_step, scheme, rannacher_steps, steps_per_segment=None):
    plan = []
    t_prev = 0.0
    left = rannacher_steps if scheme == "crank_nicolson" else 0
    for j, t in enumerate(times):
        segment = t - t_prev
        if segment > 0:
            steps = steps_per_segment or max(1, int(math.ceil(segment / max_step - 1e-9)))
            k = segment / steps
            for s in range(steps):
                record = j if s == steps - 1 else None
                if scheme == "implicit_euler":
                    plan.append(("ie", k, record))
                elif left > 0:
                    plan.append(("ie", 0.5 * k, None))
                    plan.append(("ie", 0.5 * k, record))
                    left -= 2
                else:
                    plan.append(("cn", k, record))
        else:
            plan.append((None, 0.0, j))
        t_prev = t
    if len(plan) > MAX_STEPS:
        raise UnstableStep("{} time steps requested; increase dt".format(len(plan)))
    return plan


def _march(stepper, u0, times, max_step, scheme, rannacher_steps, steps_per_segment=None, desc="march"):
    """Returns the solution at every time, or None when the max-principle monitor trips."""
    plan = _step_plan(times, max_step, scheme, rannacher_steps, steps_per_segment)
    lo, hi = float(np.min(u0)), float(np.max(u0))
    tol = MONITOR_TOL * max(1.0, float(np.max(np.abs(u0))))
    out = [None] * len(times)
    u = u0.copy()
    for method, k, record in tqdm(plan, desc=desc, disable=progress_disabled() or len(plan) < 1000):
        if method is not None:
            u = stepper.step(u, method, k)
            if not np.all(np.isfinite(u)):
                raise UnstableStep("non-finite values after a {} step of {:.3g}".format(method, k))
            if method == "cn" and (np.min(u) < lo - tol or np.max(u) > hi + tol):
                return None
        if record is not None:
            out[record] = u.copy()
    return out


@dataclass
class PdeSolution:
    """Grid values of v(t, .) with a Richardson error estimate from the half-resolution grid."""
    grid: GridSpec
    times: Tuple[float, ...]
    values: np.ndarray
    scheme: str
    peclet: float
    upwind_fraction: float
    coarse: Optional["PdeSolution"] = None

    def index(self, t):
        hits = [j for j, s in enumerate(self.times) if abs(s - t) <= 1e-12 * max(1.0, abs(t))]
        if not hits:
            raise InvalidParameter("time {} was not requested from the solver".format(t))
        return hits[0]

    def at(self, t):
        return self.values[self.index(t)]

    def gradient(self, t):
        return fd_gradient(self.at(t), self.grid.spacing)

    def error_nodes(self, t):
        """|u_h - u_2h| / 3 on the nodes shared with the coarse grid."""
        if self.coarse is None:
            return np.zeros(self.coarse_shape())
        return np.abs(self.at(t)[self.grid.coarse_slices()] - self.coarse.at(t)) / 3.0

    def gradient_error_nodes(self, t):
        if self.coarse is None:
            return np.zeros(self.coarse_shape())
        diff = self.gradient(t)[self.grid.coarse_slices()] - self.coarse.gradient(t)
        return np.linalg.norm(diff, axis=-1) / 3.0

    def error_estimate(self, t):
        return float(np.max(self.error_nodes(t)))

    def coarse_shape(self):
        return tuple((n + 1) // 2 for n in self.grid.nodes)

    def interpolate(self, t, points):
        return _interpolate(self.grid, self.at(t), points)

    def gradient_at(self, t, points):
        gradient = self.gradient(t)
        return np.stack([_interpolate(self.grid, gradient[..., k], points) for k in range(self.grid.dim)], axis=-1)

    def to_frame(self, t):
        """The slice at time t on the nodes shared with the coarse grid: xi_1, .., value, ci."""
        mesh = np.meshgrid(*[axis[::2] for axis in self.grid.axes()], indexing="ij")
        frame = pd.DataFrame({"xi_{}".format(k + 1): m.ravel() for k, m in enumerate(mesh)})
        frame["value"] = self.at(t)[self.grid.coarse_slices()].ravel()
        frame["ci"] = self.error_nodes(t).ravel()
        return frame


def _interpolate(grid, values, points):
    points = np.asarray(points, dtype=float)
    if points.ndim < 2:
        points = points.reshape(-1, grid.dim)
    if grid.dim == 1:
        return interpolate.CubicSpline(grid.axes()[0], values)(points[:, 0])
    return interpolate.RegularGridInterpolator(grid.axes(), values, method="linear")(points)


def fd_gradient(values, spacing):
    """Fourth-order central differences inside, second-order one-sided at the two outer layers."""
    parts = []
    for k, h in enumerate(spacing):
        v = np.moveaxis(values, k, 0)
        g = np.gradient(v, h, axis=0, edge_order=2)
        if v.shape[0] >= 5:
            g[2:-2] = (-v[4:] + 8.0 * v[3:-1] - 8.0 * v[1:-3] + v[:-4]) / (12.0 * h)
        parts.append(np.moveaxis(g, 0, k))
    return np.stack(parts, axis=-1)


def _check_grid(model, grid):
    if model.dim > MAX_GRID_DIM:
        raise InvalidParameter("the grid solver handles n <= {}, got n={}".format(MAX_GRID_DIM, model.dim))
    if grid.dim != model.dim:
        raise DimensionMismatch("grid dimension {} != model dimension {}".format(grid.dim, model.dim))


def solve_parabolic_grid(model, phi, f, times, grid, estimate_error=True):
    """v(t) = T_phi(t) f at the requested times, by Crank-Nicolson (Rannacher start) or implicit Euler."""
    _check_grid(model, grid)
    times = tuple(sorted(set(float(t) for t in times)))
    if not times or times[0] < 0:
        raise InvalidParameter("times must be nonnegative and nonempty")
    generator, peclet, fraction = assemble_generator(grid, model, phi)
    u0 = np.asarray(f(grid.points()), dtype=float)
    if not np.all(np.isfinite(u0)):
        raise InvalidParameter("initial datum is not finite on the grid")
    stepper = _Stepper(generator)
    scheme = grid.scheme
    out = _march(stepper, u0, times, grid.dt, scheme, grid.rannacher_steps)
    if out is None:
        logger.warning("Max-principle violation under Crank-Nicolson; restarting with implicit Euler")
        scheme = "implicit_euler"
        out = _march(stepper, u0, times, grid.dt, scheme, 0)
    values = np.stack(out).reshape((len(times),) + grid.shape)
    coarse = None
    if estimate_error:
        coarse_grid = grid.coarsened()
        if scheme != grid.scheme:
            coarse_grid = GridSpec(coarse_grid.lower, coarse_grid.upper, coarse_grid.nodes, coarse_grid.dt,
                                   scheme, 0, coarse_grid.max_peclet)
        coarse = solve_parabolic_grid(model, phi, f, times, coarse_grid, estimate_error=False)
    solution = PdeSolution(grid, times, values, scheme if scheme == grid.scheme else scheme + " (fallback)",
                           peclet, fraction, coarse)
    if coarse is not None:
        logger.debug("Grid solve: times={} error estimates={}".format(
            times, [solution.error_estimate(t) for t in times]))
    return solution


## Resolvent
@dataclass
class ResolventSolution:
    grid: GridSpec
    lam: float
    values: np.ndarray
    direct: np.ndarray
    quadrature_error: float
    discretization_error: float
    tail_bound: float
    intervals: int
    sup_f: float
    horizon: float = 0.0
    coarse: Optional[np.ndarray] = None

    @property
    def tolerance(self):
        return self.quadrature_error + self.discretization_error + self.tail_bound

    def gradient(self):
        return fd_gradient(self.values, self.grid.spacing)

    def sup_bound(self):
        return self.sup_f / self.lam

    def gradient_bound(self, beta):
        return math.sqrt(math.pi / (beta * self.lam)) * self.sup_f

    def gradient_tolerance(self, beta):
        """Quadrature gap and Richardson estimate of the gradient plus the truncated tail."""
        gap = float(np.max(np.linalg.norm(fd_gradient(self.values - self.direct, self.grid.spacing), axis=-1)))
        richardson = 0.0
        if self.coarse is not None:
            fine = fd_gradient(self.direct, self.grid.spacing)[self.grid.coarse_slices()]
            coarse_spacing = tuple(2.0 * h for h in self.grid.spacing)
            richardson = float(np.max(np.linalg.norm(fine - fd_gradient(self.coarse, coarse_spacing), axis=-1))) / 3.0
        tail = 0.0
        if self.horizon > 0:
            tail = math.exp(-self.lam * self.horizon) * self.sup_f / (self.lam * math.sqrt(beta * self.horizon))
        return gap + richardson + tail


def _laplace_weights(lam, a, b):
    """Exact integrals of e^{-lam t} against the two hat functions of [a, b]."""
    delta = b - a
    x = lam * delta
    decay = math.exp(-lam * a)
    i0 = decay * -math.expm1(-x) / lam
    i1 = decay * (-math.expm1(-x) - x * math.exp(-x)) / lam ** 2
    return i0 - i1 / delta, i1 / delta


def resolvent_elliptic(model, phi, f, lam, grid, ratio=1.15, substeps=8, first_time=None,
                       tail_tol=1e-10, max_intervals=400):
    """v = int_0^inf e^{-lam t} T_phi(t) f dt on a geometric time grid, plus a direct sparse solve."""
    if not lam > 0:
        raise InvalidParameter("lambda must be > 0")
    _check_grid(model, grid)
    generator, _, _ = assemble_generator(grid, model, phi)
    u0 = np.asarray(f(grid.points()), dtype=float)
    sup_f = float(np.max(np.abs(u0)))
    t_end = max(math.log(max(sup_f, tail_tol) / tail_tol) / lam, 0.0)
    t = first_time or 10.0 * grid.dt
    knots = [0.0, t]
    while knots[-1] < t_end:
        knots.append(knots[-1] * ratio)
        if len(knots) - 1 > max_intervals:
            raise QuadratureBudgetExceeded("more than {} Laplace intervals needed to reach t={:.3g}".format(
                max_intervals, t_end))
    stepper = _Stepper(generator)
    out = _march(stepper, u0, knots[1:], None, grid.scheme, grid.rannacher_steps, steps_per_segment=substeps,
                 desc="resolvent")
    if out is None:
        logger.warning("Max-principle violation in the resolvent march; using implicit Euler")
        out = _march(stepper, u0, knots[1:], None, "implicit_euler", 0, steps_per_segment=substeps,
                     desc="resolvent")
    states = [u0] + out
    v = np.zeros_like(u0)
    for k in range(len(knots) - 1):
        w0, w1 = _laplace_weights(lam, knots[k], knots[k + 1])
        v += w0 * states[k] + w1 * states[k + 1]
    tail = math.exp(-lam * knots[-1]) * float(np.max(np.abs(states[-1]))) / lam
    size = generator.shape[0]
    direct = splu((lam * sparse.identity(size, format="csc") - generator).tocsc()).solve(u0)
    quadrature_error = float(np.max(np.abs(v - direct)))

    coarse_grid = grid.coarsened()
    coarse_generator, _, _ = assemble_generator(coarse_grid, model, phi)
    coarse_f = np.asarray(f(coarse_grid.points()), dtype=float)
    coarse = splu((lam * sparse.identity(coarse_generator.shape[0], format="csc") - coarse_generator).tocsc()
                  ).solve(coarse_f)
    fine_on_coarse = direct.reshape(grid.shape)[grid.coarse_slices()].ravel()
    discretization_error = float(np.max(np.abs(fine_on_coarse - coarse))) / 3.0
    logger.info("Resolvent lam={}: {} intervals, quadrature error {:.2e}, discretization {:.2e}".format(
        lam, len(knots) - 1, quadrature_error, discretization_error))
    return ResolventSolution(grid, float(lam), v.reshape(grid.shape), direct.reshape(grid.shape), quadrature_error,
                             discretization_error, tail, len(knots) - 1, sup_f, knots[-1],
                             coarse.reshape(coarse_grid.shape))


## Lyapunov constant
def lyapunov_ratio(model, grad_phi_zero_norm, r):
    """Upper bound of L_phi g divided by g = 1 + |xi|^2 on the sphere of radius r."""
    n, beta, c = model.dim, model.beta, grad_phi_zero_norm
    r = np.asarray(r, dtype=float)
    return (2.0 * n - 2.0 * beta * r ** 2 + 2.0 * c * r) / (1.0 + r ** 2)


def lyapunov_lambda(model, phi=None, grid_points=2001):
    """Smallest lambda with 2n - 2 beta |xi|^2 + 2 |grad phi(0)| |xi| <= lambda (1 + |xi|^2)."""
    c = 0.0
    if phi is not None:
        c = float(np.linalg.norm(phi.grad(np.zeros(model.dim))))
    r_max = 10.0 * (1.0 + c / model.beta + math.sqrt(model.dim / model.beta))
    radii = np.linspace(0.0, r_max, grid_points)
    ratios = lyapunov_ratio(model, c, radii)
    best = int(np.argmax(ratios))
    lo, hi = radii[max(best - 1, 0)], radii[min(best + 1, grid_points - 1)]
    refined = optimize.minimize_scalar(lambda r: -float(lyapunov_ratio(model, c, r)), bounds=(lo, hi),
                                       method="bounded", options={"xatol": 1e-12})
    return float(max(ratios[best], -refined.fun))
