"""Exception types shared across the package."""


class DiffEpiError(Exception):
    """Base class for package errors."""


class ConfigurationError(DiffEpiError):
    """Invalid configuration value (bad slack, period, class counts, ...)."""


class DomainError(DiffEpiError):
    """Input outside an operation's mathematical domain."""


class UsageError(DiffEpiError):
    """API misuse (e.g. backward on a non-scalar)."""


class CalibrationError(DiffEpiError):
    """Calibration aborted; carries a diagnostic report."""

    def __init__(self, message: str, report: dict | None = None):
        super().__init__(message)
        self.report = report or {}


class DataError(DiffEpiError):
    """Malformed input data (CSV ingestion)."""
