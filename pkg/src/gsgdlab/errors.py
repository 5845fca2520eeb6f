"""Exception types shared across the package.

Invalid arguments are plain ``ValueError``; the classes below mark the
failure modes callers may want to catch separately.
"""


class NotAvailableError(LookupError):
    """An analytic quantity is not defined for this problem kind."""


class DivergenceError(ArithmeticError):
    def __init__(self, step: int, norm: float):
        self.step = step
        self.norm = norm
        super().__init__(f"iterate diverged at step {step} (|w| = {norm:.3g})")


class DegenerateConfigurationError(ValueError):
    """A quantity is undefined because some vector is identically zero."""


class OutOfScopeError(ValueError):
    """Inputs lie outside the range a theorem is stated for."""


class DomainError(ValueError):
    """A closed-form expression is not real-valued at these inputs."""
