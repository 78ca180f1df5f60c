"""Exception hierarchy shared by every tap module."""

from __future__ import annotations


class TapError(Exception):
    """Base class for all errors raised by tap."""


class DimensionError(TapError, ValueError):
    pass


class ConfigError(TapError, ValueError):
    pass


class ContractError(TapError, ValueError):
    pass


class NumericError(TapError, ArithmeticError):
    pass


class PoseError(TapError, ValueError):
    pass


class DataError(TapError, ValueError):
    pass


class FormatError(TapError, ValueError):
    """Malformed binary or text file. ``offset`` is the byte position, when known."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
