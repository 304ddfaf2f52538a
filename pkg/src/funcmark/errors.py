"""Exception types raised across the package.

The CLI maps each class to an exit code through ``exit_code``: invalid
input is 2, numerical failures are 4.
"""

from __future__ import annotations


class FuncmarkError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class InvalidArgumentError(FuncmarkError, ValueError):
    exit_code = 2


class FormatError(FuncmarkError, ValueError):
    """A file could not be parsed (bad magic, truncated payload, bad record)."""

    exit_code = 2


class InvalidMeshError(FuncmarkError, ValueError):
    exit_code = 2


class OutOfDomainError(FuncmarkError, ValueError):
    """Query point lies outside a grid field's bounding box."""

    exit_code = 2


class UndefinedDirectionError(FuncmarkError, ValueError):
    """Point at the origin has no spherical direction."""

    exit_code = 4


class SingularDirectionError(FuncmarkError, ValueError):
    """Point on the z-axis, where the azimuth gradient is singular."""

    exit_code = 4


class NonConvergenceError(FuncmarkError, ArithmeticError):
    """Newton inversion failed from every start.

    ``residual`` holds the best ``|D(y) - x|`` reached (per point when
    raised from a batched call).
    """

    exit_code = 4

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class SingularJacobianError(FuncmarkError, ArithmeticError):
    exit_code = 4


class EmptySurfaceError(FuncmarkError, ArithmeticError):
    exit_code = 4


class SamplingExhaustedError(FuncmarkError, ArithmeticError):
    exit_code = 4


class UndecodableMessageError(FuncmarkError, ArithmeticError):
    exit_code = 4


class AlignmentFailedError(FuncmarkError, ArithmeticError):
    """Best alignment residual exceeds the acceptance bound.

    The best transform found is kept on ``transform`` for inspection.
    """

    exit_code = 4

    def __init__(self, message, transform=None, residual=None):
        super().__init__(message)
        self.transform = transform
        self.residual = residual
