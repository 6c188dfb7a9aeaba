"""Shared exception types."""

from __future__ import annotations

__all__ = [
    "ConfigError",
    "PropagationGapError",
    "DivergenceError",
    "InitializationError",
]


class ConfigError(ValueError):
    """A configuration file or option set is invalid."""


class PropagationGapError(RuntimeError):
    """The IMU stream has a gap larger than the configured maximum."""


class DivergenceError(RuntimeError):
    """The filter state or covariance left the trustworthy range."""


class InitializationError(RuntimeError):
    """State initialization could not be completed from the given data."""
