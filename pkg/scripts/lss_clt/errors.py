"""
Exception hierarchy shared by the library and the command-line front end.
Each class carries the process exit code the CLI reports for it.
"""


class LssCltError(Exception):
    """Base class for every error raised on purpose by the package."""
    exit_code = 1


class ConfigError(LssCltError, ValueError):
    """Malformed configuration, model spec or design."""
    exit_code = 1


class ConvergenceError(LssCltError, RuntimeError):
    """
    An iterative solve did not reach its tolerance.

    Args:
        message: Human readable diagnostic
        solution: Last iterate (may be None)
        trajectory: Residual history of the failed solve
    """
    exit_code = 2

    def __init__(self, message, solution=None, trajectory=None):
        super().__init__(message)
        self.solution = solution
        self.trajectory = list(trajectory or [])


class NumericalQualityError(LssCltError, ArithmeticError):
    """A computed quantity failed a numerical sanity check."""
    exit_code = 3


class SingularSystemError(NumericalQualityError):
    """A zeta, nu or w linear system is numerically singular."""
    exit_code = 3
