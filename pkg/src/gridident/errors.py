"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
numerical failures (SolverError, ConvergenceError, TrainingDiverged) -> 3.
"""


class GridIdentError(Exception):
    """Base class for all package errors."""


class ConfigError(GridIdentError):
    """Invalid configuration file or flag combination."""


class DataError(GridIdentError):
    """Malformed or inconsistent dataset on disk."""


class SolverError(GridIdentError):
    """Numerical integration failure (NaN/Inf field output, step budget)."""


class ConvergenceError(GridIdentError):
    """Root finding did not converge; carries the final residual norm."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class TrainingDiverged(GridIdentError):
    """Training loss became non-finite; carries the partial report."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
