"""Exception types shared across the package."""


class SppinnError(Exception):
    """Base class for all package errors."""


class ShapeError(SppinnError):
    """Operand shapes are incompatible with the requested operation."""


class ContractError(SppinnError):
    """A documented precondition was violated (e.g. backward on a non-scalar root)."""


class UnsupportedOpError(SppinnError):
    """The computation graph contains a primitive with no derivative rule."""


class InvariantError(SppinnError):
    """A structural invariant no longer holds (e.g. negative ICNN weight)."""


class ConditioningError(SppinnError):
    """A linear system is rank deficient and no regularization was requested."""


class StepFailureError(SppinnError):
    """An implicit time step failed to converge.

    Carries the step index and the last Newton residual for diagnosis.
    """

    def __init__(self, message, step=None, residual=None):
        super().__init__(message)
        self.step = step
        self.residual = residual


class OptimError(SppinnError):
    """Optimization aborted (non-finite gradients or objective)."""


class IdxError(SppinnError):
    """An IDX byte stream is malformed (bad magic or truncated payload)."""


class ConfigError(SppinnError):
    """A run configuration file could not be parsed or validated."""
