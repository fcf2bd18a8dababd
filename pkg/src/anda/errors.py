"""Structured errors and their process exit codes.

The CLI maps exceptions to exit codes: configuration problems exit with
2, data or model problems with 3, and violated output invariants with 4.
"""


class AndaError(Exception):
    """Base class for every structured error raised by this package."""

    exit_code = 1


class ConfigError(AndaError):
    """Invalid, unknown, or inconsistent configuration values."""

    exit_code = 2


class DataError(AndaError):
    """Malformed or missing dataset, checkpoint, or archive content."""

    exit_code = 3


class ModelError(AndaError):
    """Graph construction or evaluation failed (shape or domain errors)."""

    exit_code = 3


class TrainingError(ModelError):
    """Training diverged into non-finite losses or weights."""


class InvariantViolation(AndaError):
    """A guaranteed output invariant failed validation."""

    exit_code = 4
