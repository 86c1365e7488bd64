"""Exception hierarchy shared by the solver layers."""


class SimpTopoError(Exception):
    """Base class for all package errors."""


class ParameterError(SimpTopoError, ValueError):
    """Invalid argument: out-of-range constant, size mismatch, bad index."""


class SolveError(SimpTopoError, RuntimeError):
    """The reduced equilibrium system could not be solved to the residual contract."""


class DegeneracyError(SimpTopoError, ValueError):
    """Active-constraint gradients are linearly dependent."""

    def __init__(self, message, dependent_rows=()):
        super().__init__(message)
        self.dependent_rows = tuple(dependent_rows)


class ScalingError(SimpTopoError, ValueError):
    """A division by a gradient component hit zero."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class FeasibilityError(SimpTopoError, RuntimeError):
    """The volume target cannot be met inside the density box."""


class InnerLoopError(SimpTopoError, RuntimeError):
    """The OC multiplier search failed to bracket the volume target."""

    def __init__(self, message, bracket=None):
        super().__init__(message)
        self.bracket = bracket


class ActiveSetError(SimpTopoError, RuntimeError):
    """Active-set refinement did not settle within its toggle budget."""


class ProblemFileError(SimpTopoError, ValueError):
    """Malformed or invalid problem file."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
