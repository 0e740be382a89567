# Covariance spectrum and the truncated Gaussian reference measure.
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
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ou_lab.utils.exceptions import (DimensionMismatch, EmptySpectrum, InvalidParameter,
                                     NonPositiveEigenvalue)
from ou_lab.utils.utils_general import (batch_means_ci, block_sizes, derive_seed, make_rng,
                                        ratio_ci)


logger = logging.getLogger(__name__)

BLOCK_SIZE = 4096


@dataclass(frozen=True)
class Spectrum:
    """Non-increasing positive eigenvalues of the covariance truncation."""
    eigenvalues: Tuple[float, ...]

    @property
    def lambda1(self):
        return self.eigenvalues[0]

    @property
    def beta(self):
        return 1.0 / self.eigenvalues[0]

    @property
    def trace(self):
        return float(sum(self.eigenvalues))

    def __len__(self):
        return len(self.eigenvalues)

    def as_array(self):
        return np.asarray(self.eigenvalues, dtype=float)


def validate_spectrum(raw):
    values = [float(v) for v in raw] if raw is not None else []
    if len(values) == 0:
        raise EmptySpectrum("the spectrum needs at least one eigenvalue")
    for i, value in enumerate(values):
        if not np.isfinite(value) or value <= 0.0:
            raise NonPositiveEigenvalue(
                "NonPositiveEigenvalue: eigenvalue #{} is {} (all eigenvalues must be > 0)".format(i, value))
    spectrum = Spectrum(tuple(sorted(values, reverse=True)))
    logger.debug("Spectrum lambda1={} trace={}".format(spectrum.lambda1, spectrum.trace))
    return spectrum


@dataclass(frozen=True)
class GaussianModel:
    """gamma_n = prod_i N(0, lambda_i) on the first `dim` coordinates of the spectrum."""
    spectrum: Spectrum
    dim: int

    def __post_init__(self):
        if not 1 <= int(self.dim) <= len(self.spectrum):
            raise DimensionMismatch("dim={} must lie in [1, {}]".format(self.dim, len(self.spectrum)))

    @classmethod
    def from_eigenvalues(cls, raw, dim=None):
        spectrum = validate_spectrum(raw)
        return cls(spectrum, len(spectrum) if dim is None else int(dim))

    @property
    def lambdas(self):
        return self.spectrum.as_array()[:self.dim]

    @property
    def lambda1(self):
        return self.spectrum.lambda1

    @property
    def beta(self):
        return self.spectrum.beta

    @property
    def log_normalizer(self):
        return 0.5 * float(np.sum(np.log(2.0 * np.pi * self.lambdas)))

    def linear_drift(self, xi):
        """B xi with B = diag(-1/lambda_i)."""
        return -np.asarray(xi, dtype=float) / self.lambdas

    def check_points(self, xi):
        xi = np.asarray(xi, dtype=float)
        if xi.shape[-1] != self.dim:
            raise DimensionMismatch("points have dimension {}, model has {}".format(xi.shape[-1], self.dim))
        return xi


@dataclass(frozen=True)
class SampleBatch:
    points: np.ndarray
    seed: int
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.weights is not None:
            weights = np.asarray(self.weights, dtype=float)
            if weights.shape != (len(self.points),):
                raise DimensionMismatch("one weight per point is required")
            if np.any(weights < 0.0) or not np.any(weights > 0.0):
                raise InvalidParameter("weights must be nonnegative and not all zero")

    @property
    def count(self):
        return len(self.points)

    def weights_or_ones(self):
        return np.ones(self.count) if self.weights is None else np.asarray(self.weights, dtype=float)

    def integrate(self, values):
        """Unnormalized integral E_gamma[w g] = int g dnu with its CI."""
        return Estimate(*batch_means_ci(self.weights_or_ones() * np.asarray(values, dtype=float)), self.count)

    def mass(self):
        return Estimate(*batch_means_ci(self.weights_or_ones()), self.count)

    def mean(self, values):
        """Self-normalized mean sum(w g) / sum(w)."""
        return Estimate(*ratio_ci(values, self.weights_or_ones()), self.count)


@dataclass(frozen=True)
class Estimate:
    value: float
    ci_halfwidth: float
    samples: int


def _gaussian_block(lambdas, size, seed):
    rng = make_rng(seed)
    return rng.standard_normal((size, len(lambdas))) * np.sqrt(lambdas)


def sample_gaussian(model, count, seed, block_size=BLOCK_SIZE, workers=1):
    """i.i.d. draws from gamma_n; block k always uses sub-seed derive_seed(seed, k)."""
    if int(count) < 1:
        raise InvalidParameter("count must be >= 1")
    sizes = block_sizes(count, block_size)
    seeds = [derive_seed(seed, k) for k in range(len(sizes))]
    lambdas = model.lambdas
    if workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(lambda args: _gaussian_block(lambdas, *args), zip(sizes, seeds)))
    else:
        blocks = [_gaussian_block(lambdas, size, s) for size, s in zip(sizes, seeds)]
    return SampleBatch(np.concatenate(blocks, axis=0), int(seed))


def log_density_gaussian(model, xi):
    xi = model.check_points(xi)
    return -0.5 * np.sum(xi ** 2 / model.lambdas, axis=-1) - model.log_normalizer


def _tail_points(model, n, x, mc_samples, seed):
    x = np.asarray(x, dtype=float).ravel()
    if x.size < n:
        raise DimensionMismatch("x has {} coordinates, need at least n={}".format(x.size, n))
    tail_model = GaussianModel(Spectrum(model.spectrum.eigenvalues[n:model.dim]), model.dim - n)
    tail = sample_gaussian(tail_model, mc_samples, seed).points
    head = np.broadcast_to(x[:n], (mc_samples, n))
    return np.concatenate([head, tail], axis=1)


def conditional_expectation(f, model, n, x, mc_samples, seed):
    """E_n f(x): the first n coordinates frozen at x, the tail integrated against gamma."""
    N = model.dim
    if not 1 <= n <= N:
        raise DimensionMismatch("n={} must lie in [1, {}]".format(n, N))
    x = np.asarray(x, dtype=float).ravel()
    if n == N:
        if x.size != N:
            raise DimensionMismatch("x must have {} coordinates".format(N))
        return Estimate(float(np.asarray(f(x[None, :]))[0]), 0.0, 1)
    points = _tail_points(model, n, x, mc_samples, seed)
    values = np.asarray(f(points), dtype=float)
    return Estimate(*batch_means_ci(values), mc_samples)


def lp_norm_contractivity(f, model, n, p, outer, inner, seed):
    """Estimates of ||E_n f||_p and ||f||_p on gamma_N from the same joint draws.

    The pointwise Jensen inequality holds draw by draw, so the first estimate never exceeds
    the second.
    """
    N = model.dim
    if not 1 <= n <= N:
        raise DimensionMismatch("n={} must lie in [1, {}]".format(n, N))
    heads = sample_gaussian(model, outer, seed).points
    tails = sample_gaussian(model, outer * inner, derive_seed(seed, "tail")).points
    points = tails.reshape(outer, inner, N).copy()
    points[:, :, :n] = heads[:, None, :n]
    values = np.asarray(f(points.reshape(-1, N)), dtype=float).reshape(outer, inner)

    inner_means = values.mean(axis=1)
    conditional_p, conditional_ci = batch_means_ci(np.abs(inner_means) ** p)
    full_p, full_ci = batch_means_ci(np.mean(np.abs(values) ** p, axis=1))
    return (norm_from_power(conditional_p, conditional_ci, p, outer),
            norm_from_power(full_p, full_ci, p, outer))


def norm_from_power(power_mean, power_ci, p, samples):
    value = power_mean ** (1.0 / p)
    if power_mean > 0.0:
        ci = power_ci * value / (p * power_mean)
    else:
        ci = power_ci ** (1.0 / p)
    return Estimate(float(value), float(ci), samples)

