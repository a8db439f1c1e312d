"""Exception types shared across the package."""

from __future__ import annotations


class AstraeaError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(AstraeaError):
    """A run configuration, model descriptor, or input shape is invalid."""


class NumericError(AstraeaError):
    """A non-finite value appeared where a finite one is required."""


class IdxFormatError(AstraeaError):
    """An IDX file failed validation; the message names the byte offset."""


class InsufficientSamplesError(AstraeaError):
    """A resampling request exceeded the available samples of some class."""


class DivergenceUndefinedError(AstraeaError):
    """KL divergence is undefined: P puts mass where Q has none."""
