# Check reports, verdict rules, rate fits and the explicit constants of the inequalities.
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

import json
import math
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Optional

import numpy as np
from scipy import optimize, stats

from ou_lab.utils.exceptions import FitInsufficientPoints, InvalidParameter


logger = logging.getLogger(__name__)

GUARD_BAND = 3.0
ROUNDOFF = 1e-12
MIN_FIT_POINTS = 5


class Verdict(str, Enum):
    PASS = "PASS"
    FAIL = "FAIL"
    INCONCLUSIVE = "INCONCLUSIVE"


@dataclass
class CheckReport:
    """lhs <= rhs, judged against a tolerance assembled from named sources."""
    name: str
    lhs: float
    rhs: float
    tolerance: float
    provenance: Dict[str, float]
    verdict: Verdict
    equality: bool = False
    expected_verdict: Optional[Verdict] = None
    metadata: Dict[str, object] = field(default_factory=dict)

    @property
    def margin(self):
        return self.rhs - self.lhs

    @property
    def outcome(self):
        """The verdict seen by the harness: a report that meets its expected verdict counts as PASS."""
        if self.expected_verdict is None:
            return self.verdict
        if self.verdict == self.expected_verdict:
            return Verdict.PASS
        if self.verdict == Verdict.INCONCLUSIVE:
            return Verdict.INCONCLUSIVE
        return Verdict.FAIL

    def to_row(self):
        return {
            "name": self.name,
            "params": json.dumps(self.metadata, sort_keys=True, default=_plain),
            "lhs": self.lhs,
            "rhs": self.rhs,
            "margin": self.margin,
            "tolerance": self.tolerance,
            "provenance": ";".join("{}={:.6g}".format(k, v) for k, v in sorted(self.provenance.items())),
            "verdict": self.verdict.value,
            "equality": bool(self.equality),
            "expected_verdict": self.expected_verdict.value if self.expected_verdict else "",
            "outcome": self.outcome.value,
        }

    def declare_equality(self, equality):
        """The same comparison judged with a declared equality flag; node-wise and trend reports are kept."""
        if "pass_fraction" in self.metadata or "strict" in self.metadata or self.expected_verdict is not None:
            return self
        verdict, is_equality = decide_verdict(self.lhs, self.rhs, self.tolerance, equality)
        return replace(self, verdict=verdict, equality=is_equality)


def _plain(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


def decide_verdict(lhs, rhs, tolerance, equality=None):
    """Returns (verdict, equality flag).

    Both sides within the tolerance of zero is a trivial PASS. An equality case, declared or
    detected from |margin| <= tolerance, is INCONCLUSIVE. Otherwise PASS iff
    margin >= -tolerance and FAIL only below the guard band of 3 tolerances.
    """
    margin = rhs - lhs
    if not (np.isfinite(lhs) and np.isfinite(rhs)):
        return Verdict.INCONCLUSIVE, bool(equality)
    if abs(lhs) <= tolerance and abs(rhs) <= tolerance:
        return Verdict.PASS, False
    is_equality = abs(margin) <= tolerance if equality is None else bool(equality)
    if is_equality and abs(margin) <= tolerance:
        return Verdict.INCONCLUSIVE, True
    if margin >= -tolerance:
        return Verdict.PASS, is_equality
    if margin < -GUARD_BAND * tolerance:
        return Verdict.FAIL, is_equality
    return Verdict.INCONCLUSIVE, is_equality


def _tolerance(provenance, lhs, rhs):
    provenance = {k: float(v) for k, v in provenance.items() if v is not None}
    provenance.setdefault("roundoff", ROUNDOFF * (1.0 + abs(lhs) + abs(rhs)))
    return float(sum(v for v in provenance.values() if np.isfinite(v))), provenance


def make_report(name, lhs, rhs, provenance, equality=None, expected_verdict=None, **metadata):
    lhs, rhs = float(lhs), float(rhs)
    tolerance, provenance = _tolerance(provenance, lhs, rhs)
    verdict, is_equality = decide_verdict(lhs, rhs, tolerance, equality)
    report = CheckReport(name, lhs, rhs, tolerance, provenance, verdict, is_equality, expected_verdict,
                         dict(metadata))
    logger.debug("{}: lhs={:.6g} rhs={:.6g} tol={:.3g} -> {}".format(name, lhs, rhs, tolerance, verdict.value))
    return report


def make_trend_report(name, later, earlier, provenance, **metadata):
    """later < earlier strictly: PASS once the decrease clears the tolerance, FAIL once the increase
    clears the guard band, INCONCLUSIVE in between.
    """
    return make_report(name, later, earlier, provenance, equality=True, strict=True, **metadata)


def make_array_report(name, lhs, rhs, tolerances, equality=None, expected_verdict=None, min_pass_fraction=0.99,
                      **metadata):
    """Node-wise comparison reported at the worst node.

    `tolerances` maps provenance names to arrays (or scalars) broadcast against lhs. The check
    passes when at least `min_pass_fraction` of the nodes pass and none falls below the guard band.
    """
    lhs = np.asarray(lhs, dtype=float)
    rhs = np.broadcast_to(np.asarray(rhs, dtype=float), lhs.shape).ravel()
    lhs = lhs.ravel()
    parts = {k: np.broadcast_to(np.asarray(v, dtype=float), lhs.shape).ravel() for k, v in tolerances.items()}
    parts["roundoff"] = ROUNDOFF * (1.0 + np.abs(lhs) + np.abs(rhs))
    total = np.sum(np.stack(list(parts.values())), axis=0)
    margin = rhs - lhs
    worst = int(np.argmin(margin + total))
    pass_fraction = float(np.mean(margin >= -total))
    below_guard = int(np.sum(margin < -GUARD_BAND * total))
    if equality is None:
        equality = bool(np.all(np.abs(margin) <= total)) and bool(np.any(np.abs(lhs) > total))
    verdict, is_equality = decide_verdict(lhs[worst], rhs[worst], total[worst], equality)
    if verdict != Verdict.PASS and not is_equality and pass_fraction >= min_pass_fraction and below_guard == 0:
        verdict = Verdict.PASS
    if is_equality and verdict == Verdict.PASS and pass_fraction < 1.0 and below_guard == 0:
        verdict = Verdict.INCONCLUSIVE
    metadata.update(nodes=int(lhs.size), pass_fraction=pass_fraction, n_below_guard=below_guard,
                    worst_node=worst)
    provenance = {k: float(v[worst]) for k, v in parts.items()}
    return CheckReport(name, float(lhs[worst]), float(rhs[worst]), float(total[worst]), provenance, verdict,
                       is_equality, expected_verdict, metadata)


## Rate fits
@dataclass
class RateFit:
    times: np.ndarray
    values: np.ndarray
    mode: str
    slope: float
    intercept: float
    slope_ci: float
    r_value: float
    residuals: np.ndarray

    def to_rows(self, name):
        return [{"name": name, "mode": self.mode, "t": float(t), "value": float(v), "residual": float(r),
                 "slope": self.slope, "slope_ci": self.slope_ci}
                for t, v, r in zip(self.times, self.values, self.residuals)]


def required_points(times, mode):
    if mode == "loglog":
        decades = math.log10(max(times) / min(times)) if min(times) > 0 else 0.0
        return max(MIN_FIT_POINTS, int(math.ceil(MIN_FIT_POINTS * decades)))
    return MIN_FIT_POINTS


def fit_rate(times, values, mode="loglog", min_points=None):
    """Least-squares slope of log(values) against log(t) ("loglog") or t ("semilog").

    Non-positive or non-finite values are dropped before the fit.
    """
    if mode not in ("loglog", "semilog"):
        raise InvalidParameter("unknown fit mode '{}'".format(mode))
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = np.isfinite(values) & (values > 0.0) & (times > 0.0 if mode == "loglog" else np.isfinite(times))
    times, values = times[keep], values[keep]
    need = min_points or (required_points(times, mode) if times.size else MIN_FIT_POINTS)
    if times.size < need or times.size < 3:
        raise FitInsufficientPoints("rate fit needs {} usable points, got {}".format(need, times.size))
    x = np.log(times) if mode == "loglog" else times
    y = np.log(values)
    fit = stats.linregress(x, y)
    quantile = stats.t.ppf(0.975, times.size - 2)
    residuals = y - (fit.intercept + fit.slope * x)
    logger.info("Rate fit ({}): slope {:.4f} +- {:.4f} over {} points".format(
        mode, fit.slope, quantile * fit.stderr, times.size))
    return RateFit(times, values, mode, float(fit.slope), float(fit.intercept), float(quantile * fit.stderr),
                   float(fit.rvalue), residuals)


## Constants
def _young_objective(log_eta, p):
    first = math.exp(min(2.0 / p * log_eta, 700.0)) / (2.0 * (p - 1.0))
    second = (1.0 - p / 2.0) * math.exp(min(2.0 / (p - 2.0) * log_eta, 700.0))
    return first + second


def smoothing_constant(p):
    """K_p of |grad T(t)f|^p <= K_p t^{-p/2} T(t)|f|^p.

    For 1 < p < 2 the Young-inequality expression is minimized in eta at unit time; p = 2 is
    its limit 1/2 and p > 2 uses K_2^{p/2}.
    """
    if not p > 1:
        raise InvalidParameter("the smoothing estimate needs p > 1, got {}".format(p))
    if p >= 2.0 - 1e-6:
        return 0.5 ** (max(p, 2.0) / 2.0)
    result = optimize.minimize_scalar(_young_objective, args=(p,), bounds=(-20.0, 20.0), method="bounded",
                                      options={"xatol": 1e-12})
    return float(result.fun)


def poincare_constant(p, lambda1):
    """K of ||f - m(f)||_p <= K ||grad f||_p: sqrt(lambda1) at p = 2, a recursive bound for p > 2."""
    if p < 2:
        raise InvalidParameter("the Poincare constant is defined for p >= 2, got {}".format(p))
    if p == 2:
        return math.sqrt(lambda1)
    eta = (2.0 / (lambda1 * p * (p - 2.0))) ** ((p - 2.0) / p)
    base = lambda1 ** (p / 2.0) if p <= 4 else poincare_constant(p / 2.0, lambda1) ** p
    return (2.0 * (lambda1 * p / (2.0 * eta ** (p / 2.0)) + base)) ** (1.0 / p)
