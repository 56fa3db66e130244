"""Exception hierarchy.

Numerical failures map to CLI exit code 3, configuration problems to exit
code 2.
"""

from __future__ import annotations


class CgBoundsError(Exception):
    """Base class for all library errors."""


class ConfigError(CgBoundsError):
    """Invalid experiment configuration; carries the offending field path."""

    def __init__(self, field_path: str, message: str):
        super().__init__(f"{field_path}: {message}")
        self.field_path = field_path


class NumericalError(CgBoundsError):
    """Base class for failures of a numerical procedure."""


class DegenerateMapError(NumericalError):
    """The Gram matrix of the coarse map is (numerically) singular."""


class TuningError(NumericalError):
    """MCMC step-size adaptation ended outside the admissible acceptance band."""


class InsufficientOccupancyError(NumericalError):
    """Too few samples fell into a bin to estimate a conditional average."""


class BlowUpError(NumericalError):
    """A trajectory produced non-finite or absurdly large values."""


class ExtrapolationError(NumericalError):
    """A coefficient field was queried outside its grid."""


class StepSizeError(NumericalError):
    """A time step violates the stability restriction of the scheme."""


class BoxTooSmallError(NumericalError):
    """Probability mass reached the boundary of the computational box."""


class GridMismatchError(CgBoundsError):
    """Two densities that must share a grid do not."""


class IncompleteReportError(CgBoundsError):
    """A bound cannot be assembled because a constant is missing."""

    def __init__(self, missing: str):
        super().__init__(f"missing constant: {missing}")
        self.missing = missing
