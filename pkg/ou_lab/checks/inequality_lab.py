# Numerical checks of the gradient, functional and long-time inequalities of the perturbed
# Ornstein-Uhlenbeck semigroups, each returning CheckReports with a tolerance provenance.
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

import numpy as np

from ou_lab.checks.evaluators import GridEvaluator, LabContext, is_trivial_scene, lipschitz_estimate
from ou_lab.checks.reports import (MIN_FIT_POINTS, Verdict, fit_rate, make_array_report, make_report,
                                   make_trend_report, poincare_constant, smoothing_constant)
from ou_lab.models.convex_geometry import FullSpace, PenalizedScene, penalized_potential, project_domain, \
    zero_potential
from ou_lab.models.grid_solver import resolvent_elliptic
from ou_lab.models.mc_solver import McSemigroup
from ou_lab.models.oracle import QUAD_HALF_WIDTH, MehlerOU, mehler_apply
from ou_lab.models.spectral_measure import sample_gaussian
from ou_lab.utils.config import SolverArguments
from ou_lab.utils.exceptions import DimensionMismatch, FitInsufficientPoints, InvalidParameter, UnstableStep
from ou_lab.utils.utils_general import SEEDS, Z_95, Z_95_ONE_SIDED, batch_means_ci, delta_method_ci, derive_seed


logger = logging.getLogger(__name__)

SLOPE_SLACK = 0.05
NOISE_RATIO = 10.0
ZERO_LEVEL = 1e-12
QUADRATURE_TOL = 1e-10
BEYOND_CRITICAL_FACTOR = 1.2


def _context(scene, lab):
    return lab if lab is not None else LabContext(scene)


def _as_list(functions):
    if functions is None:
        return []
    return list(functions) if isinstance(functions, (list, tuple)) else [functions]


def _norm(field):
    return field.map(lambda g: np.linalg.norm(g, axis=-1))


def _scene_meta(scene):
    return {"epsilon": scene.epsilon, "domain": scene.domain.label, "potential": scene.potential.label,
            "dim": scene.model.dim}


def default_points(scene, points=None):
    """The given points, or 0, +-0.5 and 1 standard deviations along the first axis; projected onto Omega."""
    dim = scene.model.dim
    if points is None:
        sd = math.sqrt(scene.model.lambdas[0])
        points = np.zeros((4, dim))
        points[:, 0] = np.array([0.0, 0.5, -0.5, 1.0]) * sd
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[-1] != dim:
        raise DimensionMismatch("points have {} coordinates, the model {}".format(points.shape[-1], dim))
    return project_domain(scene.domain, points)


#######################
## Gradient estimates
#######################

def check_pointwise_gradient(scene, f, t, p, lab=None, mode=None, points=None):
    """|grad T(t)f|^p <= e^{-p t / lambda1} T(t) |grad f|^p, node-wise or at sampled points."""
    if not p >= 1:
        raise InvalidParameter("the pointwise gradient estimate needs p >= 1, got {}".format(p))
    lab = _context(scene, lab)
    decay = math.exp(-p * t / scene.model.lambda1)
    meta = dict(_scene_meta(scene), t=t, p=p, function=f.label)
    if lab.mode(mode) == "grid":
        ev = lab.grid
        lhs = _norm(ev.gradient(f, t)).map(lambda g: g ** p)
        rhs = ev.value(f.grad_norm_power(p), t).map(lambda v: decay * v)
        mask = ev.interior(lab.settings.interior_fraction)
        error = ev.node_error(lhs) + ev.node_error(rhs)
        return make_array_report("pointwise_gradient", ev.nodes(lhs)[mask], ev.nodes(rhs)[mask],
                                 {"discretization": error[mask]}, min_pass_fraction=lab.settings.min_pass_fraction,
                                 mode="grid", **meta)

    settings = lab.settings
    semigroup = McSemigroup.reflected(scene.model, scene.potential, scene.domain, paths=settings.paths,
                                      step=settings.step, seed=derive_seed(lab.seed, "pointwise"),
                                      block_size=settings.block_size, workers=settings.mc_workers)
    lhs, rhs, ci, bias = [], [], [], []
    for x in default_points(scene, points):
        grad = semigroup.gradient(f, t, x)
        size = float(np.linalg.norm(grad.value))
        slope = p * size ** (p - 1.0)
        target = semigroup.apply(f.grad_norm_power(p), t, x)
        lhs.append(size ** p)
        rhs.append(decay * target.value)
        ci.append(slope * float(np.linalg.norm(grad.ci_halfwidth)) + decay * target.ci_halfwidth)
        bias.append(slope * float(np.linalg.norm(grad.fd_bias)))
    return make_array_report("pointwise_gradient", lhs, rhs, {"ci": ci, "fd_bias": bias},
                             min_pass_fraction=1.0, mode="mc", **meta)


def check_integrated_smoothing(scene, f, p, t, lab=None, times=None):
    """||grad T(t)f||_p <= K_p^{1/p} t^{-1/2} ||f||_p in L^p(nu_eps)."""
    if not t > 0:
        raise InvalidParameter("the smoothing estimate needs t > 0")
    lab = _context(scene, lab)
    ev = lab.grid
    factor = smoothing_constant(p) ** (1.0 / p) / math.sqrt(t)
    lhs, lhs_err = ev.lp_norm(_norm(ev.gradient(f, t, times)), p)
    norm_f, norm_err = ev.lp_norm(ev.initial(f), p)
    return make_report("integrated_smoothing", lhs, factor * norm_f,
                       {"discretization": lhs_err + factor * norm_err}, equality=False, t=t, p=p,
                       function=f.label, **_scene_meta(scene))


def check_smoothing(scene, f, p, times, lab=None, rate_window=None):
    """|grad T(t)f|^p <= K_p t^{-p/2} T(t)|f|^p on the nodes for every t, plus the t^{-p/2} blow-up rate.

    Without rate_window the fitted log-log slope is only bounded below by -(p/2)(1 + slack). With
    rate_window=(low, high) it must lie in [low, high], so a rate that never blows up fails the upper side.
    Returns (reports, fit); fit is None when grad T(t)f vanishes (constant f).
    """
    lab = _context(scene, lab)
    times = tuple(sorted(float(t) for t in times))
    if not times or times[0] <= 0:
        raise InvalidParameter("smoothing times must be > 0")
    if rate_window is not None and not (len(rate_window) == 2 and rate_window[0] < rate_window[1]):
        raise InvalidParameter("rate_window must be (low, high) with low < high, got {}".format(rate_window))
    constant = smoothing_constant(p)
    ev = lab.grid
    mask = ev.interior(lab.settings.interior_fraction)
    reports, integrals = [], []
    for t in times:
        gradient = _norm(ev.gradient(f, t, times)).map(lambda g: g ** p)
        bound = ev.value(f.power(p), t, times).map(lambda v: constant * t ** (-p / 2.0) * v)
        error = ev.node_error(gradient) + ev.node_error(bound)
        reports.append(make_array_report("smoothing", ev.nodes(gradient)[mask], ev.nodes(bound)[mask],
                                         {"discretization": error[mask]}, equality=False,
                                         min_pass_fraction=lab.settings.min_pass_fraction, t=t, p=p, K_p=constant,
                                         function=f.label, **_scene_meta(scene)))
        integrals.append(ev.integral(gradient)[0])
        reports.append(check_integrated_smoothing(scene, f, p, t, lab, times))

    if f.has("constant") or max(integrals) <= ZERO_LEVEL:
        logger.info("No smoothing rate for {}: the gradient vanishes".format(f.label))
        return reports, None
    try:
        fit = fit_rate(times, integrals, "loglog")
    except FitInsufficientPoints as err:
        logger.warning("Smoothing rate of {} skipped: {}".format(f.label, err))
        return reports, None
    lower = -(p / 2.0) * (1.0 + SLOPE_SLACK) if rate_window is None else float(rate_window[0])
    meta = dict(p=p, slope=fit.slope, r_value=fit.r_value, function=f.label, **_scene_meta(scene))
    reports.append(make_report("smoothing_rate", lower, fit.slope, {"fit": fit.slope_ci}, equality=False, **meta))
    if rate_window is not None:
        reports.append(make_report("smoothing_rate_window", fit.slope, float(rate_window[1]), {"fit": fit.slope_ci},
                                   equality=False, window=[float(w) for w in rate_window], **meta))
    return reports, fit


def check_uniform_gradient(model, phi, f, times, settings=None, evaluator=None):
    """sup |grad T_phi(t)f| <= ||f||_inf / sqrt(beta t) for bounded f and convex phi."""
    if not np.isfinite(f.sup_norm):
        raise InvalidParameter("the uniform gradient bound needs a bounded f, got {}".format(f.label))
    times = tuple(sorted(float(t) for t in times))
    ev = evaluator or GridEvaluator.from_potential(model, phi, settings or SolverArguments())
    reports = []
    for t in times:
        if not t > 0:
            raise InvalidParameter("the uniform gradient bound needs t > 0")
        gradient = _norm(ev.gradient(f, t, times))
        bound = f.sup_norm / math.sqrt(model.beta * t)
        reports.append(make_array_report("uniform_gradient", ev.nodes(gradient), bound,
                                         {"discretization": ev.node_error(gradient)}, equality=False,
                                         min_pass_fraction=1.0, t=t, function=f.label,
                                         potential=phi.label if phi is not None else "zero"))
    return reports


#######################
## Functional inequalities
#######################

def check_logsob(scene, functions, p, lab=None, measure="restricted"):
    """int A log A <= I log(I / M) + (p^2 lambda1 / 2) int |f|^{p-2} |grad f|^2 with A = |f|^p, I = int A."""
    if not p > 1:
        raise InvalidParameter("the entropy inequality needs p > 1, got {}".format(p))
    lab = _context(scene, lab)
    mc = lab.mc(measure)
    weights, points = mc.weights, mc.points
    scale = p * p * scene.model.lambda1 / 2.0
    reports = []
    for f in _as_list(functions):
        values = np.abs(np.asarray(f(points), dtype=float))
        nonzero = values > ZERO_LEVEL
        safe = np.where(nonzero, values, 1.0)
        power = np.where(nonzero, safe ** p, 0.0)
        entropy = np.where(nonzero, power * np.log(np.where(nonzero, power, 1.0)), 0.0)
        energy = np.where(nonzero, safe ** (p - 2.0) * np.sum(f.grad(points) ** 2, axis=-1), 0.0)
        columns = np.stack([weights * entropy, weights * power, weights, weights * energy], axis=1)
        means = columns.mean(axis=0)
        ratio = means[1] / means[2]
        log_ratio = math.log(ratio) if ratio > 0 else 0.0
        lhs = means[0]
        rhs = means[1] * log_ratio + scale * means[3]
        ci = delta_method_ci(columns, [-1.0, log_ratio + 1.0, -ratio, scale])
        reports.append(make_report("logsob", lhs, rhs, {"ci": ci}, p=p, measure=measure, mass=means[2],
                                   function=f.label, **_scene_meta(scene)))
    return reports


def check_poincare(scene, functions, p, lab=None):
    """||f - m(f)||_p <= K ||grad f||_p in L^p(nu) for p >= 2."""
    constant = poincare_constant(p, scene.model.lambda1)
    lab = _context(scene, lab)
    mc = lab.mc("restricted")
    weights, points = mc.weights, mc.points
    mass = mc.mass().value
    reports = []
    for f in _as_list(functions):
        values = np.asarray(f(points), dtype=float)
        mean = mc.mean(values)
        spread = np.abs(values - mean.value) ** p
        slope = np.linalg.norm(f.grad(points), axis=-1) ** p
        columns = np.stack([weights * spread, weights * slope], axis=1)
        means = columns.mean(axis=0)
        lhs = means[0] ** (1.0 / p)
        rhs = constant * means[1] ** (1.0 / p)
        gradient = [-(1.0 / p) * means[0] ** (1.0 / p - 1.0) if means[0] > 0 else 0.0,
                    constant / p * means[1] ** (1.0 / p - 1.0) if means[1] > 0 else 0.0]
        ci = delta_method_ci(columns, gradient)
        reports.append(make_report("poincare", lhs, rhs, {"ci": ci, "mean_ci": mean.ci_halfwidth * mass ** (1.0 / p)},
                                   p=p, K=constant, function=f.label, **_scene_meta(scene)))
    return reports


def hyper_exponent(q, t, lambda1):
    return (q - 1.0) * math.exp(2.0 * t / lambda1) + 1.0


def check_hyper(scene, functions, q, t, lab=None, p_list=None, beyond_critical=True, mode=None, measure="restricted"):
    """||T(t)f||_p <= M^{1/p - 1/q} ||f||_q for every p up to (q - 1) e^{2t/lambda1} + 1.

    The grid checks T_eps in L(nu_eps); Monte Carlo checks the reflected T_Omega in L(nu) unless
    `measure` is "penalized". On the unperturbed 1-D model an exponential f is also tested beyond
    the critical exponent, where the estimate must break.
    """
    if not q > 1 or not t >= 0:
        raise InvalidParameter("hypercontractivity needs q > 1 and t >= 0")
    lab = _context(scene, lab)
    critical = hyper_exponent(q, t, scene.model.lambda1)
    exponents = [critical] + sorted(float(e) for e in (p_list or ()) if 1.0 <= e < critical)
    grid_mode = lab.mode(mode) == "grid"
    if grid_mode:
        ev = lab.grid
        mass, mass_err = ev.mass()
    else:
        mc = lab.mc(measure)
        estimate = mc.mass()
        mass, mass_err = estimate.value, estimate.ci_halfwidth

    def compare(f, exponent, norm_q, norm_q_err, expected=None, **extra):
        factor = mass ** (1.0 / exponent - 1.0 / q)
        factor_err = abs(1.0 / exponent - 1.0 / q) * mass ** (1.0 / exponent - 1.0 / q - 1.0) * mass_err
        if grid_mode:
            lhs, lhs_err = ev.lp_norm(ev.value(f, t), exponent)
            provenance = {"discretization": lhs_err + factor * norm_q_err + factor_err * norm_q}
        else:
            estimate, inner = mc.nested_lp_norm(f, t, exponent)
            lhs = estimate.value
            provenance = {"ci": estimate.ci_halfwidth + factor * norm_q_err + factor_err * norm_q, "inner-MC": inner,
                          "scheme_bias": mc.bias_budget(f) * mass ** (1.0 / exponent)}
            extra = dict(extra, measure=measure)
        return make_report("hyper", lhs, factor * norm_q, provenance, equality=False if expected else None,
                           expected_verdict=expected, p=exponent, q=q, t=t, critical_p=critical,
                           function=f.label, mode="grid" if grid_mode else "mc", **dict(_scene_meta(scene), **extra))

    reports = []
    for f in _as_list(functions):
        if grid_mode:
            norm_q, norm_q_err = ev.lp_norm(ev.initial(f), q)
        else:
            estimate = mc.lp_norm(f(mc.points), q)
            norm_q, norm_q_err = estimate.value, estimate.ci_halfwidth
        for exponent in exponents:
            reports.append(compare(f, exponent, norm_q, norm_q_err))
        if beyond_critical and f.has("exponential") and scene.model.dim == 1 and is_trivial_scene(scene) and t > 0:
            reports.append(compare(f, BEYOND_CRITICAL_FACTOR * critical, norm_q, norm_q_err, expected=Verdict.FAIL,
                                   beyond_critical=True))
    return reports


#######################
## Long-time behavior
#######################

def _decay_rate_report(f, exponent, times, values, errors, lambda1, meta):
    keep = [(t, v) for t, v, e in zip(times, values, errors) if v > NOISE_RATIO * e]
    target = -(1.0 - SLOPE_SLACK) / lambda1
    try:
        fit = fit_rate([t for t, _ in keep], [v for _, v in keep], "semilog")
    except FitInsufficientPoints as err:
        logger.warning("Decay rate of {} in L^{:g} skipped: {}".format(f.label, exponent, err))
        return make_report("decay_rate", float("nan"), target, {}, equality=False, p=exponent, function=f.label,
                           **meta), None
    implied = max(v * math.exp(t / lambda1) for t, v in zip(fit.times, fit.values))
    report = make_report("decay_rate", fit.slope, target, {"fit": fit.slope_ci}, equality=False, p=exponent,
                         slope=fit.slope, implied_constant=implied, function=f.label, **meta)
    return report, fit


def check_decay(scene, functions, p, times, lab=None, p_list=(1.5, 2.0, 4.0), mode=None, fit=True,
                measure="restricted"):
    """Exponential decay towards the mean: ||T(t)f - m||_2 <= e^{-t/lambda1} ||f||_2, the gradient
    bound ||grad T(t)f||_p <= K_p^{1/p} e^{1/lambda1} e^{-t/lambda1} ||f||_p for t >= 1 and semilog
    rate fits of ||T(t)f - m||_p. Returns (reports, fits).

    The grid works with T_eps, nu_eps and m_eps; Monte Carlo with the reflected T_Omega, nu and
    m_Omega unless `measure` is "penalized". With fit=False only the two bounds are checked, at any
    times (one point of a sweep over t).
    """
    lab = _context(scene, lab)
    lambda1 = scene.model.lambda1
    times = tuple(sorted(float(t) for t in times))
    if not times:
        raise InvalidParameter("decay checks need at least one time")
    if fit and len(times) < MIN_FIT_POINTS:
        raise FitInsufficientPoints("decay rate fits need {} times, got {}".format(MIN_FIT_POINTS, len(times)))
    if fit and times[-1] < 3.0 * lambda1:
        raise InvalidParameter("decay checks need times up to at least 3 lambda1 = {:g}".format(3.0 * lambda1))
    grid_mode = lab.mode(mode) == "grid"
    meta = dict(_scene_meta(scene), mode="grid" if grid_mode else "mc")
    if not grid_mode:
        meta["measure"] = measure
    reports, fits = [], []
    source = "discretization" if grid_mode else "ci+inner-MC"
    for f in _as_list(functions):
        if grid_mode:
            ev = lab.grid
            scheme_bias = None
            initial = ev.initial(f)
            means = ev.mean_pair(initial)

            def centered_norm(t, exponent):
                return ev.lp_norm(ev.value(f, t, times).shift(*means), exponent)

            def norm_f(exponent):
                return ev.lp_norm(initial, exponent)
        else:
            mc = lab.mc(measure)
            center = mc.mean(f(mc.points)).value
            scheme_bias = mc.bias_budget(f) * math.sqrt(mc.mass().value)

            def centered_norm(t, exponent):
                estimate, inner = mc.nested_lp_norm(f, t, exponent, center=center)
                return estimate.value, estimate.ci_halfwidth + inner

            def norm_f(exponent):
                estimate = mc.lp_norm(f(mc.points), exponent)
                return estimate.value, estimate.ci_halfwidth

        l2, l2_err = norm_f(2.0)
        for t in times:
            lhs, lhs_err = centered_norm(t, 2.0)
            decay = math.exp(-t / lambda1)
            reports.append(make_report("decay_l2", lhs, decay * l2,
                                       {source: lhs_err + decay * l2_err, "scheme_bias": scheme_bias},
                                       t=t, function=f.label, **meta))

        if grid_mode and p > 1:
            factor = smoothing_constant(p) ** (1.0 / p) * math.exp(1.0 / lambda1)
            lp, lp_err = norm_f(p)
            for t in (s for s in times if s >= 1.0):
                lhs, lhs_err = ev.lp_norm(_norm(ev.gradient(f, t, times)), p)
                decay = factor * math.exp(-t / lambda1)
                reports.append(make_report("decay_gradient", lhs, decay * lp,
                                           {"discretization": lhs_err + decay * lp_err}, equality=False, t=t, p=p,
                                           function=f.label, **meta))

        if f.has("constant") or not fit:
            continue
        for exponent in p_list:
            pairs = [centered_norm(t, exponent) for t in times]
            report, fit = _decay_rate_report(f, exponent, times, [v for v, _ in pairs], [e for _, e in pairs],
                                             lambda1, meta)
            reports.append(report)
            if fit is not None:
                fits.append(("decay_rate[{},p={:g}]".format(f.label, exponent), fit))
    return reports, fits


def check_asymptotic_mean(scene, f, times, lab=None, points=None, mode=None):
    """|T(t)f(x) - m(f)| is small once t >= 5 lambda1, for T_eps against nu_eps and T_Omega against nu."""
    lab = _context(scene, lab)
    lambda1 = scene.model.lambda1
    t = max(float(s) for s in times)
    if t < 5.0 * lambda1:
        raise InvalidParameter("the asymptotic mean needs t >= 5 lambda1 = {:g}".format(5.0 * lambda1))
    decay = math.exp(-t / lambda1)
    points = default_points(scene, points)
    meta = dict(_scene_meta(scene), t=t, function=f.label)
    reports = []

    def compare(name, x, value, mean, error, typical):
        lhs = abs(value - mean)
        rhs = max(2.0 * error, decay * max(abs(float(f(x))), typical))
        return make_report(name, lhs, rhs, {"estimate": error}, equality=False, x=list(x), **meta)

    if lab.mode(mode) == "grid":
        ev = lab.grid
        initial = ev.initial(f)
        fine, coarse = ev.mean_pair(initial)
        mass = ev.mass()[0]
        mean_err = abs(fine - coarse) / ev.richardson + ev.truncation(initial) / mass
        typical = ev.lp_norm(initial, 2.0)[0] / math.sqrt(mass)
        field = ev.value(f, t, (t,))
        error = float(np.max(ev.node_error(field))) + mean_err
        values = ev.solve(f, (t,)).interpolate(t, points)
        for x, value in zip(points, values):
            reports.append(compare("asymptotic_mean_penalized", x, float(value), fine, error, typical))
    else:
        mc = lab.mc("penalized")
        mean = mc.mean(f(mc.points))
        typical = mc.lp_norm(f(mc.points), 2.0).value / math.sqrt(mc.mass().value)
        for x in points:
            estimate = mc.semigroup.apply(f, t, x)
            reports.append(compare("asymptotic_mean_penalized", x, estimate.value, mean.value,
                                   estimate.ci_halfwidth + mean.ci_halfwidth, typical))

    mc = lab.mc("restricted")
    mean = mc.mean(f(mc.points))
    typical = mc.lp_norm(f(mc.points), 2.0).value / math.sqrt(mc.mass().value)
    for x in points:
        estimate = mc.semigroup.apply(f, t, x)
        reports.append(compare("asymptotic_mean_reflected", x, estimate.value, mean.value,
                               estimate.ci_halfwidth + mean.ci_halfwidth, typical))
    return reports


#######################
## Penalization limit
#######################

def gap_trend_reports(name, diffs, eps_list, **meta):
    """|mean diffs[k+1]| < |mean diffs[k]| for consecutive epsilons, one report per step.

    Consecutive entries share their draws, so each step is judged against the one-sided 95%
    interval of the paired differences alone; the bias of the common reference cancels in it.
    """
    reports = []
    for k in range(len(diffs) - 1):
        step_ci = batch_means_ci(diffs[k] - diffs[k + 1])[1] * Z_95_ONE_SIDED / Z_95
        reports.append(make_trend_report(name, abs(float(np.mean(diffs[k + 1]))), abs(float(np.mean(diffs[k]))),
                                         {"ci": step_ci}, epsilon_from=eps_list[k], epsilon_to=eps_list[k + 1],
                                         **meta))
    return reports


def check_penalization_limit(potential, domain, model, f, t, x, eps_list, functions=None, settings=None,
                             seed=SEEDS[0]):
    """nu_eps -> nu and T_eps(t)f(x) -> T_Omega(t)f(x) along a decreasing epsilon sequence.

    The measure discrepancies int (w_eps - w_Omega) |g| dgamma are sampled with common draws, the
    semigroup gaps with common Brownian increments for the penalized and the reflected paths.
    """
    eps_list = [float(e) for e in eps_list]
    if not eps_list or np.any(np.diff(eps_list) >= 0) or eps_list[-1] <= 0:
        raise InvalidParameter("eps_list must be positive and strictly decreasing")
    settings = settings or SolverArguments()
    if eps_list[-1] < 2.0 * settings.step:
        raise UnstableStep("epsilon {} is below twice the Euler step {}".format(eps_list[-1], settings.step))
    x = np.asarray(x, dtype=float)
    if not bool(np.all(domain.contains(x, tol=1e-9))):
        raise InvalidParameter("starting point {} lies outside {}".format(x.tolist(), domain.label))
    scenes = [PenalizedScene(potential, domain, eps, model) for eps in eps_list]
    meta = {"domain": domain.label, "potential": potential.label, "t": t, "function": f.label}
    reports = []

    ## Measures
    points = sample_gaussian(model, settings.samples, derive_seed(seed, "measure")).points
    inside = domain.contains(points)
    reference = np.where(inside, np.exp(-potential.eval(points)), 0.0)
    weights = [np.exp(-penalized_potential(scene, points)[0]) for scene in scenes]
    integrands = {"mass": np.ones(len(points)), "outside": (~inside).astype(float)}
    for g in _as_list(functions):
        if np.isfinite(g.sup_norm):
            integrands["|{}|".format(g.label)] = np.abs(g(points))
    for name, integrand in integrands.items():
        diffs = [(w - reference) * integrand for w in weights]
        reports += gap_trend_reports("penalization_measure_trend", diffs, eps_list, integrand=name, **meta)

    ## Semigroups
    kwargs = dict(paths=settings.paths, step=settings.step, seed=derive_seed(seed, "paths"),
                  block_size=settings.block_size, workers=settings.mc_workers)
    reflected = McSemigroup.reflected(model, potential, domain, **kwargs).path_values(f, t, x)
    bias = 3.0 * math.sqrt(settings.step) * lipschitz_estimate(f, points[inside][:2000])
    diffs = [McSemigroup.penalized(scene, **kwargs).path_values(f, t, x) - reflected for scene in scenes]
    reports += gap_trend_reports("penalization_gap_trend", diffs, eps_list, x=x.tolist(), **meta)
    gap, ci = batch_means_ci(diffs[-1])
    reports.append(make_report("penalization_gap", abs(gap), 0.0, {"ci": ci, "scheme_bias": bias}, equality=False,
                               epsilon=eps_list[-1], x=x.tolist(), **meta))
    return reports


#######################
## Order, invariance and contraction
#######################

def check_order_properties(scene, f, g, t, p, lab=None):
    """Jensen (T f)^2 <= T f^2 and |T f| <= T|f|, and Hoelder T(fg) <= (T|f|^p)^{1/p} (T|g|^q)^{1/q}."""
    if not p > 1:
        raise InvalidParameter("Hoelder needs p > 1, got {}".format(p))
    q = p / (p - 1.0)
    lab = _context(scene, lab)
    ev = lab.grid
    mask = ev.interior(lab.settings.interior_fraction)
    meta = dict(_scene_meta(scene), t=t, function=f.label)

    def compare(name, lhs, rhs, **extra):
        error = ev.node_error(lhs) + ev.node_error(rhs)
        return make_array_report(name, ev.nodes(lhs)[mask], ev.nodes(rhs)[mask], {"discretization": error[mask]},
                                 min_pass_fraction=lab.settings.min_pass_fraction, **dict(meta, **extra))

    value = ev.value(f, t)
    reports = [
        compare("jensen_square", value.map(np.square), ev.value(f.compose(np.square, "sq"), t)),
        compare("jensen_abs", value.map(np.abs), ev.value(f.compose(np.abs, "abs"), t)),
    ]
    holder = ev.value(f.power(p), t).map(lambda a, b: np.maximum(a, 0.0) ** (1.0 / p) * np.maximum(b, 0.0) ** (1.0 / q),
                                         ev.value(g.power(q), t))
    reports.append(compare("holder", ev.value(f.times(g), t), holder, g=g.label, p=p, q=q))
    return reports


def check_invariance(scene, functions, t, lab=None, mode=None, measure="restricted"):
    """int T(t)f dnu = int f dnu, reported as the deviation |int T(t)f - int f| against zero."""
    lab = _context(scene, lab)
    reports = []
    for f in _as_list(functions):
        if lab.mode(mode) == "grid":
            ev = lab.grid
            start, start_err = ev.integral(ev.initial(f))
            end, end_err = ev.integral(ev.value(f, t))
            reports.append(make_report("invariance", abs(end - start), 0.0, {"discretization": start_err + end_err},
                                       t=t, mode="grid", function=f.label, **_scene_meta(scene)))
            continue
        mc = lab.mc(measure)
        weights = mc.weights
        live = weights > 0
        start = np.zeros(len(weights))
        start[live] = f(mc.points[live])
        deviation, ci = batch_means_ci(weights * (mc.transported(f, t) - start))
        bias = mc.bias_budget(f) * mc.mass().value
        reports.append(make_report("invariance", abs(deviation), 0.0, {"ci": ci, "scheme_bias": bias}, t=t,
                                   mode="mc", measure=measure, function=f.label, **_scene_meta(scene)))
    return reports


def check_contraction(scene, functions, times, lab=None):
    """sup |T(t)f| <= sup |f| on the grid and T(t)f >= 0 for nonnegative f."""
    lab = _context(scene, lab)
    ev = lab.grid
    times = tuple(sorted(float(t) for t in times))
    reports = []
    for f in _as_list(functions):
        bound = float(np.max(np.abs(ev.initial(f).fine)))
        for t in times:
            field = ev.value(f, t, times)
            error = float(np.max(ev.node_error(field)))
            meta = dict(_scene_meta(scene), t=t, function=f.label)
            reports.append(make_report("contraction", float(np.max(np.abs(field.fine))), bound,
                                       {"discretization": error}, **meta))
            if f.has("nonnegative"):
                reports.append(make_report("positivity", -float(np.min(field.fine)), 0.0,
                                           {"discretization": error}, equality=False, **meta))
    return reports


def check_resolvent_bounds(scene, f, lam_list, lab=None):
    """sup |R(lam)f| <= ||f||_inf / lam and sup |grad R(lam)f| <= sqrt(pi / (beta lam)) ||f||_inf."""
    if not np.isfinite(f.sup_norm):
        raise InvalidParameter("the resolvent bounds need a bounded f, got {}".format(f.label))
    lab = _context(scene, lab)
    ev = lab.grid
    beta = scene.model.beta
    reports = []
    for lam in lam_list:
        solution = resolvent_elliptic(scene.model, ev.phi, f, lam, ev.grid)
        meta = dict(_scene_meta(scene), lam=lam, function=f.label, intervals=solution.intervals)
        reports.append(make_report("resolvent_sup", float(np.max(np.abs(solution.values))), solution.sup_bound(),
                                   {"quadrature": solution.quadrature_error,
                                    "discretization": solution.discretization_error, "tail": solution.tail_bound},
                                   **meta))
        gradient = float(np.max(np.linalg.norm(solution.gradient(), axis=-1)))
        reports.append(make_report("resolvent_gradient", gradient, solution.gradient_bound(beta),
                                   {"gradient": solution.gradient_tolerance(beta)}, equality=False, **meta))
    return reports


#######################
## Closed-form agreement
#######################

def check_mehler_agreement(model, f, times, settings=None, mode="grid", accuracy=1e-3, points=None, seed=SEEDS[0]):
    """The 1-D solvers against the Mehler formula: grid error on |xi| <= 3 sqrt(lambda1), or
    Monte Carlo error at points within its CI plus the step bias seen between step and 2 step.
    """
    if model.dim != 1:
        raise DimensionMismatch("the Mehler oracle is one-dimensional, the model has n={}".format(model.dim))
    settings = settings or SolverArguments()
    oracle = MehlerOU(model.lambda1)

    def scalar(z):
        return float(f(np.array([[z]]))[0])

    times = tuple(sorted(float(t) for t in times))
    reports = []
    quadrature = QUADRATURE_TOL
    if np.isfinite(f.sup_norm):
        quadrature += oracle.truncation_bound(f.sup_norm)
    if mode == "grid":
        ev = GridEvaluator.from_potential(model, None, settings)
        axis = ev.grid.axes()[0]
        region = np.abs(axis) <= 3.0 * math.sqrt(model.lambda1)
        for t in times:
            values = ev.value(f, t, times).fine[region]
            exact = mehler_apply(oracle, scalar, t, axis[region])
            error = float(np.max(np.abs(values - exact)))
            reports.append(make_report("mehler_agreement", error, accuracy,
                                       {"quadrature": quadrature},
                                       equality=False, t=t, mode="grid", function=f.label,
                                       half_width=QUAD_HALF_WIDTH))
        return reports

    kwargs = dict(paths=settings.paths, seed=derive_seed(seed, "mehler"), block_size=settings.block_size,
                  workers=settings.mc_workers)
    fine = McSemigroup.reflected(model, zero_potential(), FullSpace(1), step=settings.step, **kwargs)
    coarse = McSemigroup.reflected(model, zero_potential(), FullSpace(1), step=2.0 * settings.step, **kwargs)
    points = np.asarray(points if points is not None else [0.0, 0.5, 1.0], dtype=float).reshape(-1)
    for t in times:
        for x in points:
            estimate = fine.apply(f, t, [x])
            bias = abs(estimate.value - coarse.apply(f, t, [x]).value)
            exact = mehler_apply(oracle, scalar, t, float(x))
            reports.append(make_report("mehler_agreement", abs(estimate.value - exact), 0.0,
                                       {"ci": estimate.ci_halfwidth, "step_bias": bias}, equality=False, t=t,
                                       x=float(x), mode="mc", function=f.label))
    return reports

