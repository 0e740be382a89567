import logging

import numpy as np
import pytest

from ou_lab.checks.evaluators import LabContext
from ou_lab.models.convex_geometry import (Ball, FullSpace, HalfSpace, PenalizedScene, quadratic_potential,
                                           zero_potential)
from ou_lab.models.spectral_measure import GaussianModel
from ou_lab.utils.config import SolverArguments


SEED = 20230701


@pytest.fixture(autouse=True)
def quiet_progress():
    # tqdm bars follow the root logger level
    root = logging.getLogger('')
    level = root.level
    root.setLevel(logging.WARNING)
    yield
    root.setLevel(level)


@pytest.fixture
def rng():
    return np.random.default_rng(SEED)


@pytest.fixture
def model1d():
    return GaussianModel.from_eigenvalues([1.0])


@pytest.fixture
def model2d():
    return GaussianModel.from_eigenvalues([1.0, 0.5])


@pytest.fixture
def small_settings():
    return SolverArguments(nodes=201, dt=2e-3, paths=4000, step=5e-3, samples=20000, inner_paths=16,
                           outer_points=400)


@pytest.fixture
def free_scene(model1d):
    return PenalizedScene(zero_potential(), FullSpace(1), 0.05, model1d)


@pytest.fixture
def halfline_scene(model1d):
    """{xi <= 0} with no potential."""
    return PenalizedScene(zero_potential(), HalfSpace([1.0], 0.0), 0.05, model1d)


@pytest.fixture
def ball_scene(model2d):
    return PenalizedScene(quadratic_potential(0.5), Ball([0.0, 0.0], 1.5), 0.05, model2d)


@pytest.fixture
def free_lab(free_scene, small_settings):
    return LabContext(free_scene, small_settings, SEED)


@pytest.fixture
def halfline_lab(halfline_scene, small_settings):
    return LabContext(halfline_scene, small_settings, SEED)
