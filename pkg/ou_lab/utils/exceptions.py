# Error taxonomy of the lab.
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


class LabError(Exception):
    """Base class of every error raised by ou_lab."""
    exit_code = 3


## Configuration / validation errors (exit status 2)
class ConfigInvalid(LabError):
    exit_code = 2


class NonPositiveEigenvalue(ConfigInvalid, ValueError):
    pass


class EmptySpectrum(ConfigInvalid, ValueError):
    pass


class DimensionMismatch(ConfigInvalid, ValueError):
    pass


class InvalidParameter(ConfigInvalid, ValueError):
    pass


class UnknownForm(ConfigInvalid, LookupError):
    pass


## Compute errors (exit status 3)
class SolverError(LabError):
    exit_code = 3


class ProjectionDidNotConverge(SolverError):
    pass


class ProxDidNotConverge(SolverError):
    pass


class QuadratureOrderTooLow(SolverError):
    pass


class QuadratureBudgetExceeded(SolverError):
    pass


class QuadratureFailure(SolverError):
    pass


class ScheduleInfeasible(SolverError):
    pass


class UnstableStep(SolverError):
    pass


class PecletError(SolverError):
    pass


class PathBlowup(SolverError):
    pass


class EffectiveSampleSizeTooLow(SolverError):
    pass


class FitInsufficientPoints(SolverError):
    pass
