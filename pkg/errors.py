"""Exception hierarchy shared by the numerical modules and the CLI.

Every exception carries the process exit code the CLI maps it to.
"""


class HilferKitError(Exception):
    exit_code = 1


class PoleError(HilferKitError, ValueError):
    """Argument sits on a pole of the Gamma function."""


class DomainError(HilferKitError, ValueError):
    """Argument outside the validated domain of an operation."""


class SingularityError(HilferKitError, ValueError):
    """Ψ′ vanishes (or turns negative) on the integration interval."""


class GridError(HilferKitError, ValueError):
    """Sampled data do not share the grid an operation requires."""


class ConvergenceError(HilferKitError, ArithmeticError):
    exit_code = 3


class NonConvergence(ConvergenceError):
    """Picard iteration exhausted its budget; `report` holds the last state."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class PointwiseImpulseError(ConvergenceError):
    """The damped fixed point u = ξ_i(t, u) stalled on an impulse window."""


class PreconditionError(HilferKitError):
    """The candidate trajectory does not satisfy the residual inequalities."""

    exit_code = 4


class ValidationError(HilferKitError):
    exit_code = 2

    def __init__(self, message, violations=()):
        super().__init__(message)
        self.violations = tuple(violations)
