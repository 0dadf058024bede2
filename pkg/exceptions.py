"""
Error Types for the Dicke DFT Toolkit

Every failure the library can raise derives from DickeDFTError. Each class
carries the process exit code the command-line surface reports for it:

- 1: numerical failure (solver, convergence, boundary, infeasibility, ...)
- 2: configuration error (malformed config, invalid model parameters)
- 3: sizing error (basis dimension or geometry cap exceeded)

Numerical errors that abandon an iterative search keep the best iterate they
reached so callers can still inspect or report it.
"""


class DickeDFTError(Exception):
    """Base class for all toolkit errors."""
    exit_code = 1


class ConfigError(DickeDFTError):
    """Malformed run configuration or invalid model parameters."""
    exit_code = 2


class SizingError(DickeDFTError):
    """A truncated basis or enumeration would exceed its configured cap."""
    exit_code = 3


class DomainError(DickeDFTError):
    """An argument lies outside the mathematical domain of an operation."""


class PreconditionError(DickeDFTError):
    """The input of a diagnostic does not satisfy what the identity assumes."""


class NumericalError(DickeDFTError):
    """Base class for failures of numerical procedures."""


class SolverError(NumericalError):
    """An eigensolver did not converge or returned residuals above tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ConvergenceError(NumericalError):
    """An iterative procedure stopped before reaching its tolerance."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class BoundaryError(NumericalError):
    """Target magnetization on (or within epsilon of) the cube boundary."""


class InfeasibleError(NumericalError):
    """Target density pair is not reachable from the available states."""

    def __init__(self, message, distance=None):
        super().__init__(message)
        self.distance = distance


class IdentificationError(NumericalError):
    """A state could not be matched to an eigenvector of its Hamiltonian."""


class AufbauError(NumericalError):
    """A constrained-search optimizer sits above the N+M-th excited state."""


class RefinementError(NumericalError):
    """Adaptive quadrature did not settle within the node budget."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class StatisticalError(NumericalError):
    """A sampling procedure accepted too few samples to be trusted."""
