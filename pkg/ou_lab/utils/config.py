# Command line and experiment-file configuration of the lab.
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

import io
import logging
import argparse
import configparser
import dataclasses
from dataclasses import dataclass, field
from typing import Dict, List, Optional, get_args, get_origin, get_type_hints

import numpy as np

from ou_lab.models.convex_geometry import PenalizedScene, eta_schedule, make_domain, make_potential
from ou_lab.models.spectral_measure import GaussianModel
from ou_lab.utils.exceptions import ConfigInvalid, InvalidParameter
from ou_lab.utils.utils_general import SEEDS, config_hash


logger = logging.getLogger(__name__)


def build_parser():
    parser = argparse.ArgumentParser(description='Numerical lab for perturbed Ornstein-Uhlenbeck semigroups on convex domains')
    subparsers = parser.add_subparsers(dest="command", required=True)

    ## Shared flags
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        '--config', help='experiment file (INI)', required=True, type=str)
    common.add_argument(
        '--out', help='output directory, overrides [experiment] output_dir', required=False, default=None, type=str)
    common.add_argument(
        '--seed', help='base seed, overrides [experiment] seed', required=False, default=None, type=int)
    common.add_argument(
        '--workers', help='size of the job pool', required=False, default=None, type=int)
    common.add_argument(
        '--strict', action='store_true', help="count INCONCLUSIVE verdicts as FAIL")

    subparsers.add_parser('run', parents=[common], help='run every check of an experiment')

    sweep = subparsers.add_parser('sweep', parents=[common], help='rerun an experiment along one axis')
    sweep.add_argument(
        '--axis', help='swept parameter', required=True, choices=["epsilon", "t", "p", "dim"])
    sweep.add_argument(
        '--values', help='values of the axis', required=True, nargs='*', type=float)

    report = subparsers.add_parser('report', help='pretty-print a JSON summary')
    report.add_argument(
        '--summary', help='summary.json written by run or sweep', required=True, type=str)
    return parser


#######################
## Experiment sections
#######################

@dataclass
class ExperimentArguments:
    name: str = field(
        default="experiment", metadata={"help": "Name written into every report"})
    seed: int = field(
        default=SEEDS[0], metadata={"help": "Base seed; job seeds are derived from it"})
    workers: int = field(
        default=1, metadata={"help": "Concurrent check jobs"})
    strict: bool = field(
        default=False, metadata={"help": "Promote INCONCLUSIVE to FAIL"})
    output_dir: str = field(
        default="results", metadata={"help": "Directory for CSV, JSON and log output"})
    disable_progress: bool = field(
        default=False, metadata={"help": "Hide tqdm bars"})


@dataclass
class SceneArguments:
    eigenvalues: List[float] = field(
        default_factory=lambda: [1.0], metadata={"help": "Covariance eigenvalues lambda_i > 0"})
    dim: Optional[int] = field(
        default=None, metadata={"help": "Truncation dimension n (default: number of eigenvalues)"})
    potential: str = field(
        default="zero", metadata={"help": "zero, quadratic, linear, abs, logcosh or sqdist"})
    potential_weight: float = field(
        default=1.0, metadata={"help": "Weight of the potential"})
    potential_center: Optional[List[float]] = field(
        default=None, metadata={"help": "Center of the quadratic potential"})
    potential_vector: Optional[List[float]] = field(
        default=None, metadata={"help": "Slope of the linear potential"})
    potential_offset: float = field(
        default=0.0, metadata={"help": "Offset of the linear potential"})
    potential_scale: float = field(
        default=1.0, metadata={"help": "Scale of the logcosh potential"})
    potential_domain: Optional[str] = field(
        default=None, metadata={"help": "[domain.<name>] section whose squared distance is the sqdist potential"})
    domain: str = field(
        default="full", metadata={"help": "full, halfspace, ball, ellipsoid, sublevel or intersection"})
    domain_normal: Optional[List[float]] = field(
        default=None, metadata={"help": "Half-space {<a, xi> <= b}: the normal a"})
    domain_offset: float = field(
        default=0.0, metadata={"help": "Half-space offset b"})
    domain_center: Optional[List[float]] = field(
        default=None, metadata={"help": "Ball or ellipsoid center"})
    domain_radius: Optional[float] = field(
        default=None, metadata={"help": "Ball radius"})
    domain_semi_axes: Optional[List[float]] = field(
        default=None, metadata={"help": "Ellipsoid semi-axes"})
    domain_parts: Optional[List[str]] = field(
        default=None, metadata={"help": "Names of [domain.<name>] sections intersected"})
    domain_function: Optional[str] = field(
        default=None, metadata={"help": "Sublevel {G <= level}: G is quadratic, linear, abs or logcosh"})
    domain_function_weight: float = field(
        default=1.0, metadata={"help": "Weight of G; a quadratic G is centered at domain_center"})
    domain_function_scale: float = field(
        default=1.0, metadata={"help": "Scale of a logcosh G"})
    domain_level: Optional[float] = field(
        default=None, metadata={"help": "Sublevel threshold"})
    epsilon: float = field(
        default=0.01, metadata={"help": "Penalization parameter"})
    eta_schedule: Optional[List[float]] = field(
        default=None, metadata={"help": "Explicit mollification radii, strictly decreasing"})
    eta_auto_n: Optional[List[int]] = field(
        default=None, metadata={"help": "Truncation levels for an automatic eta schedule"})


@dataclass
class DomainPartArguments:
    kind: str = field(
        default="halfspace", metadata={"help": "halfspace, ball, ellipsoid or sublevel"})
    normal: Optional[List[float]] = field(default=None, metadata={"help": "Half-space normal"})
    offset: float = field(default=0.0, metadata={"help": "Half-space offset"})
    center: Optional[List[float]] = field(default=None, metadata={"help": "Ball or ellipsoid center"})
    radius: Optional[float] = field(default=None, metadata={"help": "Ball radius"})
    semi_axes: Optional[List[float]] = field(default=None, metadata={"help": "Ellipsoid semi-axes"})
    function: Optional[str] = field(default=None, metadata={"help": "Sublevel function kind"})
    function_weight: float = field(default=1.0, metadata={"help": "Sublevel function weight"})
    function_scale: float = field(default=1.0, metadata={"help": "Sublevel function scale"})
    level: Optional[float] = field(default=None, metadata={"help": "Sublevel threshold"})


@dataclass
class SolverArguments:
    mode: str = field(
        default="grid", metadata={"help": "grid (n <= 2) or mc"})
    nodes: int = field(
        default=161, metadata={"help": "Grid nodes per axis (odd)"})
    dt: float = field(
        default=2e-3, metadata={"help": "Grid time step"})
    width: float = field(
        default=7.0, metadata={"help": "Grid half-width in standard deviations"})
    scheme: str = field(
        default="crank_nicolson", metadata={"help": "crank_nicolson or implicit_euler"})
    rannacher_steps: int = field(
        default=4, metadata={"help": "Implicit Euler half steps before Crank-Nicolson"})
    max_peclet: float = field(
        default=50.0, metadata={"help": "Largest admissible cell Peclet number"})
    interior_fraction: float = field(
        default=0.6, metadata={"help": "Fraction of the box used for node-wise checks"})
    min_pass_fraction: float = field(
        default=0.99, metadata={"help": "Share of nodes that must pass a node-wise check"})
    paths: int = field(
        default=20000, metadata={"help": "Monte Carlo paths per point"})
    step: float = field(
        default=1e-3, metadata={"help": "Euler-Maruyama step"})
    samples: int = field(
        default=40000, metadata={"help": "Invariant-measure draws"})
    inner_paths: int = field(
        default=32, metadata={"help": "Inner paths of nested estimates"})
    outer_points: int = field(
        default=2000, metadata={"help": "Outer points of nested estimates"})
    block_size: int = field(
        default=4096, metadata={"help": "Draws per random block"})
    mc_workers: int = field(
        default=1, metadata={"help": "Threads inside one Monte Carlo estimate"})


@dataclass
class FunctionSpec:
    kind: str = field(default="constant", metadata={"help": "Battery family"})
    value: Optional[float] = field(default=None, metadata={"help": "constant value"})
    axis: Optional[int] = field(default=None, metadata={"help": "coordinate axis"})
    direction: Optional[List[float]] = field(default=None, metadata={"help": "direction vector"})
    offset: Optional[float] = field(default=None, metadata={"help": "linear offset"})
    steepness: Optional[float] = field(default=None, metadata={"help": "tanh steepness"})
    shift: Optional[float] = field(default=None, metadata={"help": "tanh shift"})
    rate: Optional[float] = field(default=None, metadata={"help": "exponential rate"})
    frequency: Optional[float] = field(default=None, metadata={"help": "cosine frequency"})
    phase: Optional[float] = field(default=None, metadata={"help": "cosine phase"})
    center: Optional[List[float]] = field(default=None, metadata={"help": "bump center"})
    width: Optional[float] = field(default=None, metadata={"help": "bump width"})
    delta: Optional[float] = field(default=None, metadata={"help": "softabs smoothing"})

    def params(self):
        return {k: v for k, v in dataclasses.asdict(self).items() if k != "kind" and v is not None}


@dataclass
class CheckSpec:
    kind: str = field(default="pointwise_gradient", metadata={"help": "Check operation"})
    functions: List[str] = field(
        default_factory=list, metadata={"help": "Function section names, or 'battery'"})
    g: Optional[str] = field(default=None, metadata={"help": "Second function of the order checks"})
    t: Optional[float] = field(default=None, metadata={"help": "Time"})
    times: Optional[List[float]] = field(default=None, metadata={"help": "Time grid"})
    p: Optional[float] = field(default=None, metadata={"help": "Exponent p"})
    p_list: Optional[List[float]] = field(default=None, metadata={"help": "Several exponents"})
    q: Optional[float] = field(default=None, metadata={"help": "Exponent q"})
    lam: Optional[List[float]] = field(default=None, metadata={"help": "Resolvent parameters"})
    eps_list: Optional[List[float]] = field(default=None, metadata={"help": "Decreasing penalization parameters"})
    points: Optional[List[float]] = field(default=None, metadata={"help": "Evaluation points, flattened"})
    mode: Optional[str] = field(default=None, metadata={"help": "grid or mc, overrides [solver] mode"})
    measure: Optional[str] = field(default=None, metadata={"help": "restricted or penalized"})
    equality: Optional[bool] = field(default=None, metadata={"help": "Declare an equality case"})
    accuracy: Optional[float] = field(default=None, metadata={"help": "Target accuracy of agreement checks"})
    rate_window: Optional[List[float]] = field(
        default=None, metadata={"help": "Smoothing checks: low, high bounds of the fitted log-log slope"})


#######################
## INI parsing
#######################

def _parse_scalar(hint, raw, key):
    try:
        if hint is bool:
            lowered = raw.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return hint(raw.strip())
    except ValueError:
        raise ConfigInvalid("key '{}': cannot read '{}' as {}".format(key, raw, hint.__name__))


def _coerce(hint, raw, key):
    if get_origin(hint) is not None and type(None) in get_args(hint):
        if raw.strip() == "":
            return None
        hint = [a for a in get_args(hint) if a is not type(None)][0]
    if get_origin(hint) in (list, List):
        inner = get_args(hint)[0]
        return [_parse_scalar(inner, item, key) for item in raw.replace(",", " ").split()]
    return _parse_scalar(hint, raw, key)


def _format(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def section_to_dataclass(cls, section, name):
    hints = get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    values = {}
    for key, raw in section.items():
        if key not in known:
            raise ConfigInvalid("unknown key '{}' in section [{}]".format(key, name))
        values[key] = _coerce(hints[key], raw, "{}.{}".format(name, key))
    return cls(**values)


def dataclass_to_section(obj):
    return {f.name: _format(getattr(obj, f.name)) for f in dataclasses.fields(obj)}


@dataclass
class ExperimentConfig:
    experiment: ExperimentArguments
    scene: SceneArguments
    solver: SolverArguments
    functions: Dict[str, FunctionSpec]
    checks: Dict[str, CheckSpec]
    domains: Dict[str, DomainPartArguments] = field(default_factory=dict)

    def to_ini(self):
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        parser["experiment"] = dataclass_to_section(self.experiment)
        parser["scene"] = dataclass_to_section(self.scene)
        parser["solver"] = dataclass_to_section(self.solver)
        for name, spec in self.domains.items():
            parser["domain.{}".format(name)] = dataclass_to_section(spec)
        for name, spec in self.functions.items():
            parser["function.{}".format(name)] = dataclass_to_section(spec)
        for name, spec in self.checks.items():
            parser["check.{}".format(name)] = dataclass_to_section(spec)
        buffer = io.StringIO()
        parser.write(buffer)
        return buffer.getvalue()

    @property
    def hash(self):
        return config_hash(self.to_ini())

    def replace(self, **sections):
        return dataclasses.replace(self, **sections)


SECTION_TYPES = {"experiment": ExperimentArguments, "scene": SceneArguments, "solver": SolverArguments}
PREFIXED_TYPES = {"function": FunctionSpec, "check": CheckSpec, "domain": DomainPartArguments}


def parse_config_text(text, source="<string>"):
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as err:
        raise ConfigInvalid("cannot parse {}: {}".format(source, err))
    sections = {name: SECTION_TYPES[name]() for name in SECTION_TYPES}
    grouped = {prefix: {} for prefix in PREFIXED_TYPES}
    for name in parser.sections():
        body = dict(parser.items(name))
        if name in SECTION_TYPES:
            sections[name] = section_to_dataclass(SECTION_TYPES[name], body, name)
            continue
        prefix, _, label = name.partition(".")
        if prefix not in PREFIXED_TYPES or not label:
            raise ConfigInvalid("unknown section [{}]".format(name))
        grouped[prefix][label] = section_to_dataclass(PREFIXED_TYPES[prefix], body, name)
    config = ExperimentConfig(sections["experiment"], sections["scene"], sections["solver"],
                              grouped["function"], grouped["check"], grouped["domain"])
    validate_config(config)
    return config


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fp:
            text = fp.read()
    except OSError as err:
        raise ConfigInvalid("cannot read config {}: {}".format(path, err))
    return parse_config_text(text, source=path)


def apply_overrides(config, out=None, seed=None, workers=None, strict=False):
    experiment = dataclasses.replace(
        config.experiment,
        output_dir=out if out is not None else config.experiment.output_dir,
        seed=seed if seed is not None else config.experiment.seed,
        workers=workers if workers is not None else config.experiment.workers,
        strict=config.experiment.strict or bool(strict))
    return config.replace(experiment=experiment)


#######################
## Validation and scene building
#######################

CHECK_KINDS = ("pointwise_gradient", "smoothing", "integrated_smoothing", "uniform_gradient", "logsob", "poincare",
               "hyper", "decay", "asymptotic_mean", "penalization_limit", "order_properties", "invariance",
               "contraction", "resolvent_bounds", "mehler_agreement")


def validate_config(config):
    if config.solver.mode not in ("grid", "mc"):
        raise ConfigInvalid("[solver] mode must be grid or mc, got '{}'".format(config.solver.mode))
    if config.experiment.workers < 1:
        raise ConfigInvalid("[experiment] workers must be >= 1")
    if not config.checks:
        raise ConfigInvalid("the experiment declares no [check.<name>] section")
    for name, check in config.checks.items():
        if check.kind not in CHECK_KINDS:
            raise ConfigInvalid("[check.{}]: unknown kind '{}'".format(name, check.kind))
        for fname in check.functions:
            if fname != "battery" and fname not in config.functions:
                raise ConfigInvalid("[check.{}]: unknown function '{}'".format(name, fname))
        window = check.rate_window
        if window is not None and not (len(window) == 2 and window[0] < window[1]):
            raise ConfigInvalid("[check.{}]: rate_window needs low < high, got {}".format(name, window))
        if check.g is not None and check.g not in config.functions:
            raise ConfigInvalid("[check.{}]: unknown function '{}'".format(name, check.g))
    # building the scene runs the spectrum, potential and domain validation before any compute
    build_scene(config.scene, config.domains, resolve_eta=False)


def _potential_params(kind, weight=1.0, center=None, vector=None, offset=0.0, scale=1.0):
    params = {}
    if kind in ("quadratic", "abs", "logcosh"):
        params["weight"] = weight
    if kind == "quadratic" and center is not None:
        params["center"] = center
    if kind == "logcosh":
        params["scale"] = scale
    if kind == "linear":
        if vector is None:
            raise InvalidParameter("a linear function needs a vector")
        params.update(vector=vector, offset=offset)
    return params


def _domain_params(kind, dim, normal, offset, center, radius, semi_axes, function=None, function_weight=1.0,
                   function_scale=1.0, level=None):
    params = {}
    if kind == "halfspace":
        if normal is None:
            raise InvalidParameter("a half-space needs a normal")
        params.update(normal=normal, offset=offset)
    elif kind == "ball":
        if radius is None:
            raise InvalidParameter("a ball needs a radius")
        params.update(radius=radius)
        if center is not None:
            params.update(center=center)
    elif kind == "ellipsoid":
        if semi_axes is None:
            raise InvalidParameter("an ellipsoid needs semi_axes")
        params.update(semi_axes=semi_axes)
        if center is not None:
            params.update(center=center)
    elif kind == "sublevel":
        if function is None or level is None:
            raise InvalidParameter("a sublevel domain needs a function and a level")
        if function.lower() in ("zero", "sqdist"):
            raise InvalidParameter("a sublevel domain cannot be cut from a '{}' function".format(function))
        params.update(level=level, function=make_potential(
            function, dim, **_potential_params(function.lower(), function_weight, center, normal, offset,
                                               function_scale)))
    return params


def _build_part(name, parts, dim):
    if parts is None or name not in parts:
        raise ConfigInvalid("unknown domain part '{}'".format(name))
    part = parts[name]
    if part.kind.lower() == "intersection":
        raise ConfigInvalid("domain part '{}' cannot itself be an intersection".format(name))
    return make_domain(part.kind, dim, **_domain_params(part.kind.lower(), dim, part.normal, part.offset, part.center,
                                                        part.radius, part.semi_axes, part.function,
                                                        part.function_weight, part.function_scale, part.level))


def build_domain(scene_args, dim, parts=None):
    kind = scene_args.domain.lower()
    if kind == "intersection":
        names = scene_args.domain_parts or []
        if not names:
            raise InvalidParameter("an intersection needs domain_parts")
        return make_domain("intersection", dim, parts=[_build_part(name, parts, dim) for name in names])
    return make_domain(kind, dim, **_domain_params(kind, dim, scene_args.domain_normal, scene_args.domain_offset,
                                                   scene_args.domain_center, scene_args.domain_radius,
                                                   scene_args.domain_semi_axes, scene_args.domain_function,
                                                   scene_args.domain_function_weight,
                                                   scene_args.domain_function_scale, scene_args.domain_level))


def build_potential(scene_args, dim, parts=None):
    kind = scene_args.potential.lower()
    if kind == "sqdist":
        if scene_args.potential_domain is None:
            raise InvalidParameter("a sqdist potential needs potential_domain")
        return make_potential(kind, dim, domain=_build_part(scene_args.potential_domain, parts, dim))
    return make_potential(kind, dim, **_potential_params(
        kind, scene_args.potential_weight, scene_args.potential_center, scene_args.potential_vector,
        scene_args.potential_offset, scene_args.potential_scale))


def build_scene(scene_args, parts=None, seed=SEEDS[0], resolve_eta=True):
    model = GaussianModel.from_eigenvalues(scene_args.eigenvalues, scene_args.dim)
    potential = build_potential(scene_args, model.dim, parts)
    domain = build_domain(scene_args, model.dim, parts)
    scene = PenalizedScene(potential, domain, float(scene_args.epsilon), model,
                           tuple(scene_args.eta_schedule or ()))
    if scene_args.eta_auto_n and resolve_eta:
        schedule = eta_schedule(scene, scene_args.eta_auto_n, mc_samples=2000, seed=seed)
        scene = PenalizedScene(potential, domain, scene.epsilon, model, tuple(schedule))
    return scene


def parse_points(raw, dim):
    if raw is None:
        return None
    values = np.asarray(raw, dtype=float)
    if values.size % dim:
        raise ConfigInvalid("points need a multiple of {} coordinates, got {}".format(dim, values.size))
    return values.reshape(-1, dim)
