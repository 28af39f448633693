"""Exception hierarchy.

Every error class carries an ``exit_code`` so the command line runner can
map failures to distinct process statuses.
"""

from __future__ import annotations


class DyadicLabError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class GridSizeError(DyadicLabError, ValueError):
    """Grid sizes are not powers of two or extents are not positive."""

    exit_code = 10


class ParabolaClippingError(DyadicLabError, ValueError):
    """The parabola tau = |xi|^2 does not fit inside the tau extent."""

    exit_code = 11


class RegionOutOfRangeError(DyadicLabError, ValueError):
    """A requested support or slice is empty on, or exits, the grid."""

    exit_code = 12


class SupportOverflowError(DyadicLabError, RuntimeError):
    """A convolution lost more mass to cropping than allowed."""

    exit_code = 13


class WeightOverflowError(DyadicLabError, OverflowError):
    """The weight w times f is not representable in float64."""

    exit_code = 14


class PreconditionError(DyadicLabError, ValueError):
    """Inputs violate a stated support or parameter precondition."""

    exit_code = 15


class FitError(DyadicLabError, ValueError):
    """Too few octaves or a degenerate design matrix in a slope fit."""

    exit_code = 16


class BlowupStepError(DyadicLabError, FloatingPointError):
    """The exact nonlinear sub-flow hit its pole during a step."""

    exit_code = 17


class DivergenceError(DyadicLabError, RuntimeError):
    """Picard iterates grew beyond the divergence threshold."""

    exit_code = 18


class ConfigError(DyadicLabError, ValueError):
    """Unknown experiment, missing key or invalid parameter range."""

    exit_code = 20


class ReportError(DyadicLabError, OSError):
    """An output destination could not be written."""

    exit_code = 21
