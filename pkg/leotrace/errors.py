"""Exception hierarchy for leotrace."""

from __future__ import annotations

from typing import Any


class LeoTraceError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(LeoTraceError, ValueError):
    """Invalid scenario, constellation or workload configuration."""


class UsageError(LeoTraceError, ValueError):
    """An operation was called with arguments outside its contract."""


class GeometryError(LeoTraceError, ValueError):
    """Degenerate geometry, e.g. coincident observer and target."""


class ForwardingError(LeoTraceError, RuntimeError):
    """Forwarding tables are inconsistent (loop or dangling entry)."""


class TraceFormatError(LeoTraceError, ValueError):
    """A Trace File could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TraceValidationError(LeoTraceError, ValueError):
    """A Trace File violates its invariants (spacing, ranges)."""


class OffsetRangeError(LeoTraceError, ValueError):
    """A delay offset would produce negative delays."""


class CorrelationError(LeoTraceError, ArithmeticError):
    """Correlation is undefined (zero variance or too few samples)."""


class SessionError(LeoTraceError, RuntimeError):
    """A real-time relay session failed; partial stats are attached."""

    def __init__(self, message: str, stats: Any = None):
        self.stats = stats
        super().__init__(message)
