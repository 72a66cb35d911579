"""Exception hierarchy shared across the package."""

from __future__ import annotations


class CdmlError(Exception):
    """Base class for package errors."""


class InvalidArgumentError(CdmlError, ValueError):
    pass


class SingularSystemError(CdmlError, ArithmeticError):
    pass


class IllPosedError(CdmlError, ArithmeticError):
    pass


class ConvergenceError(CdmlError, ArithmeticError):
    """Raised when an iterative solver stops without meeting its tolerance.

    ``last_iterate`` carries the final coefficient vector so callers can
    inspect or warm-start from it.
    """

    def __init__(self, message, last_iterate=None, n_iter=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.n_iter = n_iter


class SeparationError(ConvergenceError):
    pass


class NoValidBandwidthError(CdmlError, ValueError):
    pass


class StageError(CdmlError):
    """Numerical failure inside a named pipeline stage (and optionally fold)."""

    def __init__(self, stage, cause, fold=None):
        where = stage if fold is None else f"{stage} (fold {fold})"
        super().__init__(f"{where}: {cause}")
        self.stage = stage
        self.fold = fold
        self.cause = cause


class InvariantError(CdmlError, AssertionError):
    pass
