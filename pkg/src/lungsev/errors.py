"""Exception types shared across the package.

The CLI maps these onto exit codes: anything derived from InputError is a
usage or data problem (exit 2), InternalError signals a broken invariant
(exit 3).
"""


class LungSevError(Exception):
    """Base class for all package-specific errors."""


class InputError(LungSevError, ValueError):
    """Invalid user input: bad files, bad arguments, violated preconditions."""


class HeaderError(InputError):
    """Volume header sidecar is missing, ill-formed, or inconsistent."""


class GeometryError(InputError):
    """Two grids that must share geometry do not."""


class EmptyMaskError(InputError):
    """A mask that must contain foreground voxels is empty."""


class DegenerateDataError(InputError):
    """A statistic is undefined for this input (constant series, all-tied
    ranks, a contingency table with a single occupied column, ...)."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class ConvergenceError(LungSevError):
    """An iterative numerical routine failed to converge."""


class InternalError(LungSevError):
    """An internal invariant was violated; indicates a bug, not bad input."""
