# Grid and Monte Carlo evaluators of semigroup values, integrals and L^p norms, shared by the checks.
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
import threading
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from ou_lab.models.convex_geometry import FullSpace
from ou_lab.models.grid_solver import GridSpec, assemble_generator, fd_gradient, solve_parabolic_grid
from ou_lab.models.mc_solver import McSemigroup, sample_invariant
from ou_lab.models.spectral_measure import Estimate, log_density_gaussian, norm_from_power
from ou_lab.utils.config import SolverArguments
from ou_lab.utils.exceptions import InvalidParameter
from ou_lab.utils.utils_general import SEEDS, batch_means_ci, derive_seed


logger = logging.getLogger(__name__)


def is_trivial_scene(scene):
    return isinstance(scene.domain, FullSpace) and scene.potential.label == "zero"


def absolute_moment(p):
    """(E|Z|^p)^{1/p} for a standard normal Z."""
    return (2.0 ** (p / 2.0) * special.gamma((p + 1.0) / 2.0) / math.sqrt(math.pi)) ** (1.0 / p)


def lipschitz_estimate(f, points):
    """Known Lipschitz constant of f, else the largest gradient norm over the points."""
    if f.lipschitz is not None:
        return float(f.lipschitz)
    return float(np.max(np.linalg.norm(f.grad(points), axis=-1)))


#######################
## Grid
#######################

@dataclass
class GridField:
    """A quantity on the fine grid and on the half-resolution grid."""
    fine: np.ndarray
    coarse: np.ndarray

    def map(self, fn, *others):
        return GridField(fn(self.fine, *[o.fine for o in others]), fn(self.coarse, *[o.coarse for o in others]))

    def shift(self, fine_value, coarse_value):
        return GridField(self.fine - fine_value, self.coarse - coarse_value)


class GridEvaluator:
    """Solves T_phi(t) f on a box and integrates against e^{-phi} gamma (trapezoid rule).

    Every quantity is carried on the fine and the coarse grid (half the nodes, twice the step);
    Richardson's |q_h - q_2h| / 3 is the discretization estimate of anything derived from them,
    relaxed to |q_h - q_2h| once upwinding makes the coarse operator first order.
    """

    def __init__(self, model, phi, grid, label="grid"):
        self.model = model
        self.phi = phi
        self.grid = grid
        self.coarse_grid = grid.coarsened()
        self.label = label
        self._cache = {}
        self._locks = {}
        self._guard = threading.Lock()
        self.weights = self._node_weights(grid)
        self.coarse_weights = self._node_weights(self.coarse_grid)
        self.tail_mass = self._tail_mass()
        upwinded = assemble_generator(self.coarse_grid, model, phi)[2] > 0
        self.richardson = 1.0 if upwinded else 3.0

    @classmethod
    def from_scene(cls, scene, settings):
        grid = grid_for(scene.model, settings, scene.domain)
        if scene.eta is not None:
            logger.info("Grid solves use Phi_eps mollified at eta={:g}; values move by at most {:.3g} t Lip(f)"
                        .format(scene.eta, scene.mollification_bound(1.0, 1.0)))
            return cls(scene.model, scene.as_potential(), grid,
                       label="penalized(eps={}, eta={:g})".format(scene.epsilon, scene.eta))
        phi = None if is_trivial_scene(scene) else scene.as_potential()
        return cls(scene.model, phi, grid, label="penalized(eps={})".format(scene.epsilon))

    @classmethod
    def from_potential(cls, model, phi, settings):
        return cls(model, phi, grid_for(model, settings), label="potential")

    def _node_weights(self, grid):
        points = grid.points()
        log_density = log_density_gaussian(self.model, points)
        if self.phi is not None:
            log_density = log_density - np.asarray(self.phi.eval(points), dtype=float)
        return grid.cell_volumes() * np.exp(log_density).reshape(grid.shape)

    def _tail_mass(self):
        half = 0.5 * (np.asarray(self.grid.upper) - np.asarray(self.grid.lower))
        inside = np.prod(1.0 - 2.0 * stats.norm.sf(half / np.sqrt(self.model.lambdas)))
        density_cap = 1.0
        if self.phi is not None:
            density_cap = float(np.exp(-np.min(self.phi.eval(self.grid.points()))))
        return float((1.0 - inside) * density_cap)

    ## Solutions
    def solve(self, f, times):
        key = (f.label, tuple(sorted(set(float(t) for t in times))))
        with self._guard:
            lock = self._locks.setdefault(key, threading.Lock())
        with lock:
            if key not in self._cache:
                logger.info("Grid solve ({}) of {} at t={}".format(self.label, f.label, list(key[1])))
                self._cache[key] = solve_parabolic_grid(self.model, self.phi, f, key[1], self.grid)
            return self._cache[key]

    def initial(self, f):
        return GridField(np.asarray(f(self.grid.points()), dtype=float).reshape(self.grid.shape),
                         np.asarray(f(self.coarse_grid.points()), dtype=float).reshape(self.coarse_grid.shape))

    def initial_gradient(self, f):
        n = self.grid.dim
        return GridField(np.asarray(f.grad(self.grid.points()), dtype=float).reshape(self.grid.shape + (n,)),
                         np.asarray(f.grad(self.coarse_grid.points()), dtype=float).reshape(
                             self.coarse_grid.shape + (n,)))

    def value(self, f, t, times=None):
        if t == 0:
            return self.initial(f)
        solution = self.solve(f, times or (t,))
        return GridField(solution.at(t), solution.coarse.at(t))

    def gradient(self, f, t, times=None):
        if t == 0:
            return self.initial_gradient(f)
        field = self.value(f, t, times)
        return GridField(fd_gradient(field.fine, self.grid.spacing),
                         fd_gradient(field.coarse, self.coarse_grid.spacing))

    ## Node-wise quantities
    def nodes(self, field):
        """Fine values on the nodes shared with the coarse grid."""
        return field.fine[self.grid.coarse_slices()]

    def node_error(self, field):
        return np.abs(self.nodes(field) - field.coarse) / self.richardson

    def interior(self, fraction):
        """Mask of shared nodes inside the central `fraction` of the box."""
        axes = [ax[::2] for ax in self.grid.axes()]
        mesh = np.meshgrid(*axes, indexing="ij")
        mask = np.ones(self.coarse_grid.shape, dtype=bool)
        for k, coords in enumerate(mesh):
            center = 0.5 * (self.grid.upper[k] + self.grid.lower[k])
            half = 0.5 * (self.grid.upper[k] - self.grid.lower[k])
            mask &= np.abs(coords - center) <= fraction * half
        return mask

    def node_points(self):
        return self.coarse_grid.points().reshape(self.coarse_grid.shape + (self.grid.dim,))

    ## Integrals
    def integral_pair(self, field):
        return float(np.sum(self.weights * field.fine)), float(np.sum(self.coarse_weights * field.coarse))

    def truncation(self, field):
        return self.tail_mass * float(np.max(np.abs(field.fine)))

    def integral(self, field):
        """(value, discretization estimate incl. the Gaussian mass outside the box)."""
        fine, coarse = self.integral_pair(field)
        return fine, abs(fine - coarse) / self.richardson + self.truncation(field)

    def mass(self):
        ones = GridField(np.ones(self.grid.shape), np.ones(self.coarse_grid.shape))
        return self.integral(ones)

    def mean_pair(self, field):
        fine, coarse = self.integral_pair(field)
        return fine / float(np.sum(self.weights)), coarse / float(np.sum(self.coarse_weights))

    def lp_norm(self, field, p):
        powered = field.map(lambda v: np.abs(v) ** p)
        fine, coarse = self.integral_pair(powered)
        value = fine ** (1.0 / p)
        truncated = (fine + self.truncation(powered)) ** (1.0 / p) - value
        return value, abs(value - coarse ** (1.0 / p)) / self.richardson + truncated


def grid_for(model, settings, domain=None):
    grid = GridSpec.for_model(model, settings.nodes, settings.dt, width=settings.width, domain=domain,
                              scheme=settings.scheme, rannacher_steps=settings.rannacher_steps,
                              max_peclet=settings.max_peclet)
    if not grid.covers(model, domain):
        logger.warning("Grid box is smaller than the coverage rule for {}".format(domain.label if domain else "R^n"))
    return grid


#######################
## Monte Carlo
#######################

class MonteCarloEvaluator:
    """Importance-sampled invariant measure plus a Monte Carlo semigroup started from its draws."""

    def __init__(self, scene, settings, seed, measure="restricted"):
        if measure not in ("restricted", "penalized"):
            raise InvalidParameter("measure must be restricted or penalized, got '{}'".format(measure))
        self.scene = scene
        self.settings = settings
        self.seed = seed
        self.measure = measure
        model = scene.model
        if measure == "restricted":
            self.batch = sample_invariant(model, settings.samples, derive_seed(seed, "invariant"),
                                          potential=scene.potential, domain=scene.domain)
            self.semigroup = McSemigroup.reflected(model, scene.potential, scene.domain, paths=settings.paths,
                                                   step=settings.step, seed=derive_seed(seed, "paths"),
                                                   block_size=settings.block_size, workers=settings.mc_workers)
        else:
            self.batch = sample_invariant(model, settings.samples, derive_seed(seed, "invariant"), scene=scene)
            self.semigroup = McSemigroup.penalized(scene, paths=settings.paths, step=settings.step,
                                                   seed=derive_seed(seed, "paths"), block_size=settings.block_size,
                                                   workers=settings.mc_workers)

    @property
    def points(self):
        return self.batch.points

    @property
    def weights(self):
        return self.batch.weights_or_ones()

    def integral(self, values):
        return self.batch.integrate(values)

    def mass(self):
        return self.batch.mass()

    def mean(self, values):
        return self.batch.mean(values)

    def lp_norm(self, values, p):
        power = self.integral(np.abs(np.asarray(values, dtype=float)) ** p)
        return norm_from_power(power.value, power.ci_halfwidth, p, power.samples)

    def lipschitz(self, f):
        return lipschitz_estimate(f, self.points[self.weights > 0][:2000])

    def bias_budget(self, f):
        """3 sqrt(step) Lip(f): the weak-error allowance of the (projected) Euler scheme."""
        return 3.0 * math.sqrt(self.semigroup.step) * self.lipschitz(f)

    ## Semigroup along the draws
    def transported(self, f, t):
        """f(X_t) for one path started at every draw with positive weight (zero elsewhere)."""
        values = np.zeros(self.batch.count)
        live = self.weights > 0
        if t == 0:
            values[live] = f(self.points[live])
            return values
        starts = self.points[live]
        states = self.semigroup.terminal_states(starts, t, paths=len(starts))
        values[live] = f(states)
        return values

    def outer(self):
        count = min(self.settings.outer_points, self.batch.count)
        return self.points[:count], self.weights[:count]

    def nested(self, f, t):
        """T(t)f at the outer draws: (means, inner standard deviations, weights)."""
        points, weights = self.outer()
        means = np.zeros(len(points))
        spread = np.zeros(len(points))
        live = weights > 0
        if t == 0:
            means[live] = f(points[live])
        else:
            means[live], spread[live] = self.semigroup.apply_many(f, t, points[live], self.settings.inner_paths)
        return means, spread, weights

    def nested_lp_norm(self, f, t, p, center=0.0):
        """||T(t)f - center||_p from nested estimates, with the Minkowski bound of the inner noise."""
        means, spread, weights = self.nested(f, t)
        power = Estimate(*batch_means_ci(weights * np.abs(means - center) ** p), len(means))
        norm = norm_from_power(power.value, power.ci_halfwidth, p, power.samples)
        inner_sd = spread / math.sqrt(self.settings.inner_paths)
        inner_norm = float(np.mean(weights * inner_sd ** p)) ** (1.0 / p)
        return norm, inner_norm * absolute_moment(p)


#######################
## Job context
#######################

class LabContext:
    """What a check needs besides its own parameters: the scene, solver settings, a seed and evaluators."""

    def __init__(self, scene, settings=None, seed=SEEDS[0], grid=None):
        self.scene = scene
        self.settings = settings or SolverArguments()
        self.seed = int(seed)
        self._grid = grid
        self._mc = {}
        self._lock = threading.Lock()

    @property
    def grid(self):
        with self._lock:
            if self._grid is None:
                self._grid = GridEvaluator.from_scene(self.scene, self.settings)
            return self._grid

    def mc(self, measure="restricted"):
        with self._lock:
            if measure not in self._mc:
                self._mc[measure] = MonteCarloEvaluator(self.scene, self.settings, self.seed, measure)
            return self._mc[measure]

    def with_seed(self, seed):
        """Same scene and settings, a new seed; the deterministic grid evaluator is shared."""
        return LabContext(self.scene, self.settings, seed, grid=self._grid)

    def mode(self, override=None):
        mode = override or self.settings.mode
        if mode == "grid" and self.scene.model.dim > 2:
            logger.warning("Grid mode needs n <= 2; using Monte Carlo for n={}".format(self.scene.model.dim))
            return "mc"
        return mode

