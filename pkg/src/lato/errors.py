"""Error taxonomy shared across the toolkit.

Every failure raised by library code derives from LatoError so callers (and
the CLI) can distinguish validation problems from genuine IO errors.
"""

from __future__ import annotations


class LatoError(ValueError):
    """Base class for all validation and domain errors."""


class SchemaError(LatoError):
    """Malformed structured input (wrong keys, counts, or value types)."""


class GeometryError(LatoError):
    """Degenerate or unrecoverable geometry (coincident eyes, collapsed face)."""


class UnitError(LatoError):
    """Operands measured on incompatible canvases or unit systems."""


class ParseError(LatoError):
    """Instruction text rejected by the grammar.

    Carries the byte offset at which the first unparseable token begins.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class RangeError(LatoError):
    """Numeric argument outside its documented operating range."""


class ConfigError(LatoError):
    """Invalid configuration value."""


class ShapeError(LatoError):
    """Array argument with the wrong shape or length."""


class NumericError(LatoError):
    """Non-finite values where finite numbers are required."""


class SanityError(LatoError):
    """Predicted geometry failed rule-based sanity checks.

    `diagnostics` holds the individual check results for logging.
    """

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class StageError(LatoError):
    """A curation stage could not produce a verdict (scorer failure etc.)."""
