"""Exception types shared across the package."""


class AirgroundError(Exception):
    """Base class for all package-specific errors."""


class InvalidSpeedError(AirgroundError):
    """Speed argument outside the valid range (must be > 0)."""


class DisconnectedNetworkError(AirgroundError):
    """No road path exists between the requested endpoints."""


class GenerationError(AirgroundError):
    """Scenario generation could not place a point within the attempt budget."""


class InfeasibleError(AirgroundError):
    """Problem instance admits no feasible solution.

    ``detail`` carries the offending entity (e.g. a task id) when known.
    """

    def __init__(self, message, detail=None):
        super().__init__(message)
        self.detail = detail


class ContractViolationError(AirgroundError):
    """An operation was called outside its stated preconditions."""


class SizeLimitError(AirgroundError):
    """Instance exceeds the size limit of an exact/enumeration method."""


class FormatVersionError(AirgroundError):
    """Persisted file has an unsupported format version."""
