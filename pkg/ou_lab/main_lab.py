# Entry script of the lab: runs the checks of an experiment file, sweeps one parameter of it, or
# pretty-prints a JSON summary.
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

import os
import sys
import logging
import dataclasses
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import pandas as pd
from tqdm import tqdm

from ou_lab.checks import inequality_lab as lab_checks
from ou_lab.checks.battery import TestFunction, default_battery, make_function
from ou_lab.checks.evaluators import LabContext
from ou_lab.checks.reports import Verdict, fit_rate, make_report
from ou_lab.utils.config import (CheckSpec, apply_overrides, build_parser, build_scene,
                                 load_config, parse_points)
from ou_lab.utils.exceptions import ConfigInvalid, FitInsufficientPoints, LabError
from ou_lab.utils.utils_general import (SCHEMA_VERSION, job_seed, progress_disabled, read_json, setup_logging,
                                        write_csv, write_json)


logger = logging.getLogger(__name__)

CHECK_COLUMNS = ["check", "seed", "name", "params", "lhs", "rhs", "margin", "tolerance", "provenance", "verdict",
                 "equality", "expected_verdict", "outcome"]
FIT_COLUMNS = ["name", "mode", "t", "value", "residual", "slope", "slope_ci"]
GRID_KINDS = ("smoothing", "integrated_smoothing", "uniform_gradient", "order_properties", "contraction",
              "resolvent_bounds")


@dataclass
class Job:
    key: str
    spec: CheckSpec
    functions: List[TestFunction]
    g: Optional[TestFunction]
    lab: LabContext
    points: Optional[np.ndarray]


@dataclass
class RunResult:
    reports: list
    fits: list
    exit_code: int
    counts: dict


#######################
## Check adapters
#######################

def _require(spec, key, name):
    value = getattr(spec, name)
    if value is None:
        raise ConfigInvalid("[check.{}]: '{}' is required for kind {}".format(key, name, spec.kind))
    return value


def _times(job):
    if job.spec.times:
        return list(job.spec.times)
    return [_require(job.spec, job.key, "t")]


def _bounded(job):
    kept = [f for f in job.functions if np.isfinite(f.sup_norm)]
    for f in job.functions:
        if not np.isfinite(f.sup_norm):
            logger.info("[check.{}]: skipping unbounded {}".format(job.key, f.label))
    return kept


def _pointwise_gradient(job):
    reports = []
    for f in job.functions:
        for t in _times(job):
            for p in job.spec.p_list or [job.spec.p or 2.0]:
                reports.append(lab_checks.check_pointwise_gradient(job.lab.scene, f, t, p, job.lab, job.spec.mode,
                                                                   job.points))
    return reports, []


def _smoothing(job):
    reports, fits = [], []
    for f in job.functions:
        found, fit = lab_checks.check_smoothing(job.lab.scene, f, job.spec.p or 2.0, _times(job), job.lab,
                                                job.spec.rate_window)
        reports += found
        if fit is not None:
            fits.append(("smoothing_rate[{}]".format(f.label), fit))
    return reports, fits


def _integrated_smoothing(job):
    times = _times(job)
    return [lab_checks.check_integrated_smoothing(job.lab.scene, f, job.spec.p or 2.0, t, job.lab, times)
            for f in job.functions for t in times], []


def _uniform_gradient(job):
    evaluator = job.lab.grid
    reports = []
    for f in _bounded(job):
        reports += lab_checks.check_uniform_gradient(job.lab.scene.model, evaluator.phi, f, _times(job),
                                                     evaluator=evaluator)
    return reports, []


def _logsob(job):
    reports = []
    for p in job.spec.p_list or [job.spec.p or 2.0]:
        reports += lab_checks.check_logsob(job.lab.scene, job.functions, p, job.lab, job.spec.measure or "restricted")
    return reports, []


def _poincare(job):
    reports = []
    for p in job.spec.p_list or [job.spec.p or 2.0]:
        reports += lab_checks.check_poincare(job.lab.scene, job.functions, p, job.lab)
    return reports, []


def _hyper(job):
    reports = []
    for t in _times(job):
        reports += lab_checks.check_hyper(job.lab.scene, job.functions, _require(job.spec, job.key, "q"), t,
                                          job.lab, p_list=job.spec.p_list, mode=job.spec.mode,
                                          measure=job.spec.measure or "restricted")
    return reports, []


def _decay(job):
    kwargs = {"p_list": job.spec.p_list} if job.spec.p_list else {}
    return lab_checks.check_decay(job.lab.scene, job.functions, job.spec.p or 2.0, _times(job), job.lab,
                                  mode=job.spec.mode, fit=bool(job.spec.times),
                                  measure=job.spec.measure or "restricted", **kwargs)


def _asymptotic_mean(job):
    reports = []
    for f in job.functions:
        reports += lab_checks.check_asymptotic_mean(job.lab.scene, f, _times(job), job.lab, job.points,
                                                    job.spec.mode)
    return reports, []


def _penalization_limit(job):
    scene = job.lab.scene
    x = job.points[0] if job.points is not None else lab_checks.default_points(scene)[0]
    f = job.functions[0]
    return lab_checks.check_penalization_limit(scene.potential, scene.domain, scene.model, f,
                                               _require(job.spec, job.key, "t"), x,
                                               _require(job.spec, job.key, "eps_list"), functions=job.functions,
                                               settings=job.lab.settings, seed=job.lab.seed), []


def _order_properties(job):
    g = job.g
    reports = []
    for f in job.functions:
        reports += lab_checks.check_order_properties(job.lab.scene, f, g or f, _require(job.spec, job.key, "t"),
                                                     job.spec.p or 2.0, job.lab)
    return reports, []


def _invariance(job):
    reports = []
    for t in _times(job):
        reports += lab_checks.check_invariance(job.lab.scene, job.functions, t, job.lab, job.spec.mode,
                                               job.spec.measure or "restricted")
    return reports, []


def _contraction(job):
    return lab_checks.check_contraction(job.lab.scene, job.functions, _times(job), job.lab), []


def _resolvent_bounds(job):
    reports = []
    for f in _bounded(job):
        reports += lab_checks.check_resolvent_bounds(job.lab.scene, f, _require(job.spec, job.key, "lam"), job.lab)
    return reports, []


def _mehler_agreement(job):
    reports = []
    for f in job.functions:
        reports += lab_checks.check_mehler_agreement(job.lab.scene.model, f, _times(job), job.lab.settings,
                                                     job.spec.mode or job.lab.settings.mode,
                                                     job.spec.accuracy or 1e-3,
                                                     None if job.points is None else job.points[:, 0], job.lab.seed)
    return reports, []


## check selection
CHECKS = {"pointwise_gradient": _pointwise_gradient,
          "smoothing": _smoothing,
          "integrated_smoothing": _integrated_smoothing,
          "uniform_gradient": _uniform_gradient,
          "logsob": _logsob,
          "poincare": _poincare,
          "hyper": _hyper,
          "decay": _decay,
          "asymptotic_mean": _asymptotic_mean,
          "penalization_limit": _penalization_limit,
          "order_properties": _order_properties,
          "invariance": _invariance,
          "contraction": _contraction,
          "resolvent_bounds": _resolvent_bounds,
          "mehler_agreement": _mehler_agreement}


#######################
## Running an experiment
#######################

def resolve_functions(config, names, dim):
    functions = []
    for name in names:
        if name == "battery":
            functions += default_battery(dim)
            continue
        spec = config.functions[name]
        functions.append(make_function(spec.kind, dim, label=name, **spec.params()))
    return functions


def build_jobs(config, scene):
    base = LabContext(scene, config.solver, config.experiment.seed)
    dim = scene.model.dim
    if dim <= 2 and any(c.kind in GRID_KINDS or (c.mode or config.solver.mode) == "grid"
                        for c in config.checks.values()):
        # built once, shared by every job
        base.grid
    jobs = []
    for key, spec in config.checks.items():
        functions = resolve_functions(config, spec.functions or ["battery"], dim)
        g = resolve_functions(config, [spec.g], dim)[0] if spec.g else None
        jobs.append(Job(key, spec, functions, g, base.with_seed(job_seed(config.experiment.seed, key)),
                        parse_points(spec.points, dim)))
    return jobs


def run_job(job):
    logger.info("Running check {} ({})".format(job.key, job.spec.kind))
    reports, fits = CHECKS[job.spec.kind](job)
    if job.spec.equality is not None:
        reports = [report.declare_equality(job.spec.equality) for report in reports]
    for report in reports:
        report.metadata.setdefault("check", job.key)
    return job, reports, fits


def decide_exit(reports, strict):
    outcomes = [r.outcome for r in reports]
    if Verdict.FAIL in outcomes or (strict and Verdict.INCONCLUSIVE in outcomes):
        return 1
    return 0


def execute(config):
    """Runs every check of a validated config and writes its outputs; returns a RunResult."""
    out = config.experiment.output_dir
    os.makedirs(out, exist_ok=True)
    text = config.to_ini()
    hash_value = config.hash
    with open(os.path.join(out, "resolved_config.ini"), "w", encoding="utf-8", newline="\n") as fp:
        fp.write(text)

    scene = build_scene(config.scene, config.domains, seed=config.experiment.seed)
    jobs = build_jobs(config, scene)
    disable = config.experiment.disable_progress or progress_disabled()
    with ThreadPoolExecutor(max_workers=config.experiment.workers) as pool:
        futures = [pool.submit(run_job, job) for job in jobs]
        results = [future.result() for future in tqdm(futures, desc="checks", disable=disable)]

    rows, fit_rows, reports, fits = [], [], [], []
    for job, found, found_fits in results:
        for report in found:
            rows.append(dict(report.to_row(), check=job.key, seed=job.lab.seed))
        for name, fit in found_fits:
            fit_rows += fit.to_rows("{}:{}".format(job.key, name))
        reports += found
        fits += found_fits
    write_csv(rows, os.path.join(out, "checks.csv"), hash_value, CHECK_COLUMNS)
    write_csv(fit_rows, os.path.join(out, "ratefits.csv"), hash_value, FIT_COLUMNS)

    exit_code = decide_exit(reports, config.experiment.strict)
    counts = dict(Counter(r.outcome.value for r in reports))
    write_json({"schema": SCHEMA_VERSION, "config_hash": hash_value, "experiment": config.experiment.name,
                "counts": counts, "verdicts": dict(Counter(r.verdict.value for r in reports)),
                "equality_cases": sum(1 for r in reports if r.equality), "exit_code": exit_code,
                "reports": rows}, os.path.join(out, "summary.json"))
    logger.info("{}: {} reports, {} -> exit {}".format(config.experiment.name, len(reports), counts, exit_code))
    return RunResult(reports, fits, exit_code, counts)


def _prepare(config_path, out, seed, workers, strict):
    config = apply_overrides(load_config(config_path), out, seed, workers, strict)
    setup_logging(config.experiment.output_dir)
    return config


def run_experiment(config_path, out=None, seed=None, workers=None, strict=False):
    """Exit status of one experiment: 0 without FAIL, 1 with FAIL (or INCONCLUSIVE when strict)."""
    return execute(_prepare(config_path, out, seed, workers, strict)).exit_code


#######################
## Sweeps
#######################

def with_axis(config, axis, value):
    if axis == "epsilon":
        # the penalization limit follows the swept epsilon; the trend is judged across sub-runs
        checks = {k: dataclasses.replace(c, eps_list=[float(value)]) if c.kind == "penalization_limit" else c
                  for k, c in config.checks.items()}
        return config.replace(scene=dataclasses.replace(config.scene, epsilon=float(value)), checks=checks)
    if axis == "dim":
        return config.replace(scene=dataclasses.replace(config.scene, dim=int(value)))
    if axis not in ("t", "p"):
        raise ConfigInvalid("unknown sweep axis '{}'".format(axis))
    checks, touched = {}, False
    for key, check in config.checks.items():
        if axis == "t" and check.kind == "decay":
            # one time per sub-run; the sweep fits the rate across sub-runs
            check = dataclasses.replace(check, t=float(value), times=None)
            touched = True
        elif getattr(check, axis) is not None:
            check = dataclasses.replace(check, **{axis: float(value)})
            touched = True
        checks[key] = check
    if not touched:
        raise ConfigInvalid("no check of the experiment takes '{}'".format(axis))
    return config.replace(checks=checks)


def _series(runs):
    """Report rows of every sub-run grouped by position: same config, same report layout."""
    length = min(len(result.reports) for _, result in runs)
    for index in range(length):
        yield index, [(value, result.reports[index]) for value, result in runs]


def trend_reports(axis, runs):
    reports, fits = [], []
    for index, series in _series(runs):
        name = series[0][1].name
        check = series[0][1].metadata.get("check")
        if axis == "epsilon" and name.startswith("penalization"):
            ordered = sorted(series, key=lambda item: -item[0])
            for (high, before), (low, after) in zip(ordered, ordered[1:]):
                reports.append(make_report("epsilon_trend", after.lhs, before.lhs,
                                           {"tolerance": after.tolerance + before.tolerance}, equality=False,
                                           check=check, report=name, index=index, epsilon_from=high,
                                           epsilon_to=low))
        if axis == "t" and name == "decay_l2":
            try:
                fit = fit_rate([v for v, _ in series], [r.lhs for _, r in series], "semilog")
            except FitInsufficientPoints as err:
                logger.warning("No sweep rate for {}#{}: {}".format(check, index, err))
                continue
            fits.append(("{}:{}#{}".format(check, name, index), fit))
    return reports, fits


def sweep(config, axis, values):
    if not values:
        raise ConfigInvalid("a sweep needs at least one value")
    root = config.experiment.output_dir
    runs = []
    for value in tqdm(values, desc="sweep {}".format(axis), disable=config.experiment.disable_progress or
                      progress_disabled()):
        sub = with_axis(config, axis, value)
        sub = sub.replace(experiment=dataclasses.replace(
            sub.experiment, output_dir=os.path.join(root, "{}={:g}".format(axis, value))))
        runs.append((value, execute(sub)))

    hash_value = config.hash
    rows = []
    for value, result in runs:
        for index, report in enumerate(result.reports):
            rows.append({"axis": axis, "value": value, "index": index, "check": report.metadata.get("check"),
                         "name": report.name, "lhs": report.lhs, "rhs": report.rhs, "tolerance": report.tolerance,
                         "verdict": report.verdict.value, "outcome": report.outcome.value})
    trends, fits = trend_reports(axis, runs)
    write_csv(rows, os.path.join(root, "trend.csv"), hash_value)
    write_csv([dict(r.to_row(), check=r.metadata.get("check"), seed=config.experiment.seed) for r in trends],
              os.path.join(root, "trend_checks.csv"), hash_value, CHECK_COLUMNS)
    write_csv([row for name, fit in fits for row in fit.to_rows(name)], os.path.join(root, "ratefits.csv"),
              hash_value, FIT_COLUMNS)
    exit_code = max([result.exit_code for _, result in runs] + [decide_exit(trends, config.experiment.strict)])
    write_json({"schema": SCHEMA_VERSION, "config_hash": hash_value, "experiment": config.experiment.name,
                "axis": axis, "values": list(values), "exit_codes": [result.exit_code for _, result in runs],
                "counts": dict(Counter(r.outcome.value for r in trends)), "exit_code": exit_code,
                "reports": [r.to_row() for r in trends]}, os.path.join(root, "summary.json"))
    return exit_code


def run_sweep(config_path, axis, values, out=None, seed=None, workers=None, strict=False):
    return sweep(_prepare(config_path, out, seed, workers, strict), axis, values)


#######################
## Reporting
#######################

def print_summary(path):
    try:
        summary = read_json(path)
    except (OSError, ValueError) as err:
        raise ConfigInvalid("cannot read summary {}: {}".format(path, err))
    print("{} (config {}, schema {})".format(summary.get("experiment"), summary.get("config_hash"),
                                             summary.get("schema")))
    frame = pd.DataFrame(summary.get("reports", []))
    if len(frame):
        columns = [c for c in ["check", "name", "lhs", "rhs", "tolerance", "verdict", "outcome"] if c in frame]
        print(frame[columns].to_string(index=False))
    print("counts: {}  exit: {}".format(summary.get("counts"), summary.get("exit_code")))
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            return print_summary(args.summary)
        if args.command == "run":
            return run_experiment(args.config, args.out, args.seed, args.workers, args.strict)
        return run_sweep(args.config, args.axis, args.values, args.out, args.seed, args.workers, args.strict)
    except LabError as err:
        logging.error("{}: {}".format(type(err).__name__, err))
        return err.exit_code


if __name__ == "__main__":
    sys.exit(main())
