"""Exception hierarchy.

Every error carries the process exit code the CLI maps it to:
0 success, 1 empty input, 2 I/O, 3 configuration, 4 staleness, 5 provider failure.
"""

from __future__ import annotations


class FingraphError(Exception):
    exit_code = 1


class EmptyInputError(FingraphError):
    exit_code = 1


class EmptyDocumentError(EmptyInputError):
    """A document reduced to nothing after boilerplate filtering."""


class EmptyGraphError(EmptyInputError):
    pass


class PersistenceError(FingraphError):
    exit_code = 2


class ConfigError(FingraphError):
    exit_code = 3


class StalenessError(FingraphError):
    """Vector index and graph store were built from different corpora."""

    exit_code = 4


class ProviderError(FingraphError):
    exit_code = 5


class TransportError(ProviderError):
    def __init__(self, message: str, attempts: int):
        super().__init__(f"{message} (after {attempts} attempt(s))")
        self.attempts = attempts


class ProviderProtocolError(ProviderError):
    pass


class NotFoundError(FingraphError, LookupError):
    pass


class SchemaParseError(FingraphError):
    def __init__(self, message: str, raw: str = "", stage: str = "", category: str | None = None):
        super().__init__(message)
        self.raw = raw
        self.stage = stage
        self.category = category


class ExtractionParseError(FingraphError):
    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class MixedStockError(FingraphError, ValueError):
    pass


class SignalParseError(ProviderError):
    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class CalendarExhaustedError(FingraphError, ValueError):
    pass


class HolidayGapError(FingraphError, ValueError):
    pass
