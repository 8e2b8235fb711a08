class QfcSimError(Exception):
    """Base class for every error raised by qfcsim."""


class DomainError(QfcSimError, ValueError):
    """An argument lies outside the domain of a physical relation; `field` names it when known."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class OrderingError(DomainError):
    """A stream that must be time-ordered is not."""


class CalibrationError(QfcSimError):
    """Calibration targets cannot be met; `diagnostic` says why."""

    def __init__(self, message, diagnostic=None):
        super().__init__(message)
        self.diagnostic = diagnostic or {}


class ConfigError(QfcSimError):
    """Invalid scenario configuration at `key` (a `section.key` path)."""

    def __init__(self, message, key=None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


class EventFormatError(QfcSimError):
    """Malformed event file; `offset` is the byte position of the problem."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class AnalysisError(QfcSimError):
    """An estimator is undefined for the given data."""
