"""Exception types raised across the package."""


class DyingExpertsError(Exception):
    """Base class for all package errors."""


class ValidationError(DyingExpertsError, ValueError):
    """Malformed input: out-of-range losses, bad shapes, repeated experts."""


class ScheduleViolation(DyingExpertsError, ValueError):
    """An operation would leave no expert alive or breaks schedule monotonicity."""


class ContractViolation(DyingExpertsError, RuntimeError):
    """A caller broke a protocol precondition (mass on dead experts, out-of-order death)."""


class CapacityError(DyingExpertsError, RuntimeError):
    """An enumeration would exceed its configured size cap."""
