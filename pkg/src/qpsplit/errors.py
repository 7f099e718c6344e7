class QpsplitError(Exception):
    """Base class for all package errors."""


class InvalidParametersError(QpsplitError, ValueError):
    pass


class ResourceError(QpsplitError, MemoryError):
    """Requested basis exceeds the configured dimension cap."""


class ConvergenceError(QpsplitError, RuntimeError):
    def __init__(self, message, values=None):
        super().__init__(message)
        self.values = values


class ChargeRangeError(QpsplitError, ValueError):
    """Split width above the maximum split (beyond clipping tolerance)."""


class SamplingError(QpsplitError, ValueError):
    """Time series is not uniformly sampled or too short."""


class ConfigError(QpsplitError, ValueError):
    pass
