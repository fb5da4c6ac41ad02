"""
Exception hierarchy for the fusion toolkit.

The CLI maps these onto exit codes:
- ValidationError (and subclasses) -> 1
- OSError (FormatError included)   -> 2
"""

from __future__ import annotations


class FusegridError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(FusegridError, ValueError):
    """Input values violate a documented precondition."""


class ShapeError(ValidationError):
    """Tensor or volume shapes are incompatible."""


class ConfigError(ValidationError):
    """A configuration value is out of range or inconsistent."""


class EmptyMaskError(ValidationError):
    """A mask has no foreground voxel."""


class ContractError(ValidationError):
    """An API was called outside its contract."""


class FormatError(FusegridError, OSError):
    """A file on disk does not follow its declared format."""
