"""Exception types shared across the package."""


class AfcError(Exception):
    """Base class for all package-specific errors."""


class NumericFault(AfcError):
    """A computation produced a non-finite value (NaN/inf).

    Raised instead of silently propagating bad floats; stateful objects
    roll back to their pre-step state before raising.
    """

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class DimensionError(AfcError):
    """Vector/matrix dimensions inconsistent with the declared layout."""


class FrequencyRangeError(AfcError):
    """Frequency outside the open interval (0, pi/T)."""


class ValidationError(AfcError):
    """One or more declared constraints violated.

    Carries the full list of violations so callers can report every
    problem at once instead of only the first.
    """

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class WindowError(AfcError):
    """Analysis window does not cover an integer number of signal periods."""


class InsufficientData(AfcError):
    """Not enough samples for the requested computation."""


class SingularBlockError(AfcError):
    """Rotation block magnitude below the invertibility floor."""


class ContractViolation(AfcError):
    """An internal guarantee was broken (upstream safeguard failed)."""
