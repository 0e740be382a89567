# Monte Carlo semigroups: Euler-Maruyama for the penalized dynamics, projected Euler for
# the reflected dynamics, CRN gradients and invariant-measure sampling.
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
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ou_lab.models.convex_geometry import FullSpace, penalized_potential, project_domain, zero_potential
from ou_lab.models.spectral_measure import BLOCK_SIZE, SampleBatch, sample_gaussian
from ou_lab.utils.exceptions import EffectiveSampleSizeTooLow, InvalidParameter, PathBlowup
from ou_lab.utils.utils_general import (batch_means_ci, block_sizes, derive_seed, effective_sample_size,
                                        make_rng)


logger = logging.getLogger(__name__)

BLOWUP_LEVEL = 1e6
FD_RELATIVE_STEP = 1e-3
MIN_ESS_FRACTION = 0.05


@dataclass(frozen=True)
class McEstimate:
    value: float
    ci_halfwidth: float
    paths: int
    step: float
    seed: int

    def to_row(self, x):
        row = {"xi_{}".format(k + 1): float(v) for k, v in enumerate(np.atleast_1d(x))}
        row.update(value=self.value, ci=self.ci_halfwidth)
        return row


@dataclass(frozen=True)
class GradientEstimate:
    value: np.ndarray
    ci_halfwidth: np.ndarray
    fd_bias: np.ndarray


def _simulate_block(drift, projector, x0, steps, step, seed):
    rng = make_rng(seed)
    x = np.array(x0, dtype=float)
    noise = math.sqrt(2.0 * step)
    for _ in range(steps):
        x = x + drift(x) * step + noise * rng.standard_normal(x.shape)
        if projector is not None:
            x = projector(x)
        if not np.all(np.abs(x) < BLOWUP_LEVEL):
            raise PathBlowup("a path left the ball of radius {:.0e}; check the drift and the step".format(
                BLOWUP_LEVEL))
    return x


def simulate_paths(drift, x0, t, paths, step, seed, projector=None, block_size=BLOCK_SIZE, workers=1):
    """Terminal states of dX = drift(X) dt + sqrt(2) dW after time t.

    x0 is a single point or one starting point per path. Paths are simulated in fixed blocks;
    block k draws its noise from sub-seed derive_seed(seed, k), so the result does not depend
    on the number of workers.
    """
    if not t > 0 or not step > 0:
        raise InvalidParameter("t and step must be > 0")
    if step > t:
        raise InvalidParameter("step {} exceeds the horizon {}".format(step, t))
    x0 = np.asarray(x0, dtype=float)
    starts = np.broadcast_to(x0, (paths, x0.shape[-1])) if x0.ndim == 1 else x0
    if len(starts) != paths:
        raise InvalidParameter("need one starting point per path")
    steps = max(1, int(math.ceil(t / step - 1e-9)))
    local_step = t / steps
    sizes = block_sizes(paths, block_size)
    offsets = np.cumsum([0] + sizes)
    jobs = [(starts[offsets[k]:offsets[k + 1]], derive_seed(seed, k)) for k in range(len(sizes))]

    def run(job):
        return _simulate_block(drift, projector, job[0], steps, local_step, job[1])

    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(run, jobs))
    else:
        blocks = [run(job) for job in jobs]
    return np.concatenate(blocks, axis=0)


class McSemigroup:
    """A configured Monte Carlo evaluator of T(t)f, penalized or reflected."""

    def __init__(self, model, drift, projector=None, paths=20000, step=1e-3, seed=0, block_size=BLOCK_SIZE,
                 workers=1, label="mc"):
        self.model = model
        self.drift = drift
        self.projector = projector
        self.paths = int(paths)
        self.step = float(step)
        self.seed = int(seed)
        self.block_size = block_size
        self.workers = workers
        self.label = label

    @classmethod
    def penalized(cls, scene, **kwargs):
        model = scene.model

        def drift(x):
            return model.linear_drift(x) - penalized_potential(scene, x)[1]

        return cls(model, drift, None, label="penalized(eps={})".format(scene.epsilon), **kwargs)

    @classmethod
    def reflected(cls, model, potential, domain, **kwargs):
        def drift(x):
            return model.linear_drift(x) - potential.grad(x)

        projector = None if isinstance(domain, FullSpace) else (lambda x: project_domain(domain, x))
        return cls(model, drift, projector, label="reflected({})".format(domain.label), **kwargs)

    def terminal_states(self, x, t, paths=None, seed=None):
        paths = self.paths if paths is None else paths
        return simulate_paths(self.drift, x, t, paths, self.step, self.seed if seed is None else seed,
                              self.projector, self.block_size, self.workers)

    def path_values(self, f, t, x):
        x = np.asarray(x, dtype=float)
        if self.projector is not None:
            x = self.projector(x)
        return np.asarray(f(self.terminal_states(x, t)), dtype=float)

    def apply(self, f, t, x):
        values = self.path_values(f, t, x)
        value, ci = batch_means_ci(values)
        return McEstimate(value, ci, self.paths, self.step, self.seed)

    def apply_many(self, f, t, points, inner):
        """Nested estimates of T(t)f at many points: (means, inner standard deviations)."""
        points = np.asarray(points, dtype=float)
        if self.projector is not None:
            points = self.projector(points)
        starts = np.repeat(points, inner, axis=0)
        states = simulate_paths(self.drift, starts, t, len(starts), self.step, self.seed, self.projector,
                                self.block_size, self.workers)
        values = np.asarray(f(states), dtype=float).reshape(len(points), inner)
        spread = values.std(axis=1, ddof=1) if inner > 1 else np.zeros(len(points))
        return values.mean(axis=1), spread

    def gradient(self, f, t, x, relative_step=FD_RELATIVE_STEP):
        """Central differences with common random numbers on both sides, per axis.

        The bias estimate compares the displacement delta with 2 delta (second-order scheme).
        """
        x = np.asarray(x, dtype=float)
        deltas = relative_step * np.sqrt(self.model.lambdas)
        value = np.empty(self.model.dim)
        ci = np.empty(self.model.dim)
        bias = np.empty(self.model.dim)
        for i, delta in enumerate(deltas):
            shift = np.zeros(self.model.dim)
            shift[i] = delta
            diff = (self.path_values(f, t, x + shift) - self.path_values(f, t, x - shift)) / (2.0 * delta)
            wide = (self.path_values(f, t, x + 2 * shift) - self.path_values(f, t, x - 2 * shift)) / (4.0 * delta)
            value[i], ci[i] = batch_means_ci(diff)
            bias[i] = abs(value[i] - float(np.mean(wide))) / 3.0
        return GradientEstimate(value, ci, bias)


def semigroup_mc_penalized(scene, f, t, x, paths, step, seed, **kwargs):
    """Euler-Maruyama estimate of T_eps(t)f(x) for d xi = (B xi - grad Phi_eps) dt + sqrt(2) dW."""
    return McSemigroup.penalized(scene, paths=paths, step=step, seed=seed, **kwargs).apply(f, t, x)


def semigroup_mc_reflected(model, potential, domain, f, t, x, paths, step, seed, **kwargs):
    """Projected Euler estimate of T_Omega(t)f(x)."""
    x = np.asarray(x, dtype=float)
    if not bool(np.all(domain.contains(x, tol=1e-9))):
        raise InvalidParameter("starting point {} lies outside {}".format(x.tolist(), domain.label))
    return McSemigroup.reflected(model, potential, domain, paths=paths, step=step, seed=seed,
                                 **kwargs).apply(f, t, x)


def semigroup_gradient(source, t, x=None, f=None):
    """Gradient of T(t)f from a grid solution (4th-order differences) or an McSemigroup (CRN)."""
    if isinstance(source, McSemigroup):
        if f is None or x is None:
            raise InvalidParameter("Monte Carlo gradients need f and x")
        return source.gradient(f, t, x)
    if x is None:
        return source.gradient(t)
    return source.gradient_at(t, x)


def sample_invariant(model, count, seed, potential=None, domain=None, scene=None, method="importance",
                     step=None, burn_in=None, thin=None, chains=256, min_ess_fraction=MIN_ESS_FRACTION):
    """Weighted draws from nu = e^{-U} 1_Omega gamma (or nu_eps = e^{-Phi_eps} gamma when a scene is given).

    importance: gamma draws with unnormalized weights, so mean(weights) estimates the total mass.
    long_run: subsampled trajectories after a burn-in of 10 lambda1, unit weights.
    """
    if int(count) < 1:
        raise InvalidParameter("count must be >= 1")
    if method == "importance":
        batch = sample_gaussian(model, count, seed)
        points = batch.points
        if scene is not None:
            log_weights = -penalized_potential(scene, points)[0]
        else:
            log_weights = np.zeros(count) if potential is None else -potential.eval(points)
            if domain is not None:
                log_weights = np.where(domain.contains(points), log_weights, -np.inf)
        weights = np.exp(log_weights)
        ess = effective_sample_size(weights)
        if ess < min_ess_fraction * count:
            raise EffectiveSampleSizeTooLow("ESS {:.0f} is below {:.0%} of {} draws".format(
                ess, min_ess_fraction, count))
        if ess < 0.5 * count:
            logger.warning("Importance sampling ESS {:.0f} of {} draws".format(ess, count))
        return SampleBatch(points, int(seed), weights)
    if method == "long_run":
        return _long_run_samples(model, count, seed, potential, domain, scene, step, burn_in, thin, chains)
    raise InvalidParameter("unknown sampling method '{}'".format(method))


def _long_run_samples(model, count, seed, potential, domain, scene, step, burn_in, thin, chains):
    step = step or 0.01 * float(np.min(model.lambdas))
    burn_in = burn_in or 10.0 * model.lambda1
    thin = thin or 0.5 * model.lambda1
    if scene is not None:
        sampler = McSemigroup.penalized(scene, step=step, seed=seed)
    else:
        sampler = McSemigroup.reflected(model, potential or zero_potential(), domain or FullSpace(model.dim),
                                        step=step, seed=seed)
    chains = min(int(chains), int(count))
    rounds = int(math.ceil(count / chains))
    x = np.zeros((chains, model.dim))
    if sampler.projector is not None:
        x = sampler.projector(x)
    x = simulate_paths(sampler.drift, x, burn_in, chains, step, derive_seed(seed, "burn_in"), sampler.projector)
    draws = []
    for r in range(rounds):
        x = simulate_paths(sampler.drift, x, thin, chains, step, derive_seed(seed, ("thin", r)), sampler.projector)
        draws.append(x)
    points = np.concatenate(draws, axis=0)[:count]
    return SampleBatch(points, int(seed), np.ones(len(points)))
