"""Exception hierarchy shared across the package."""
from __future__ import annotations

from pathlib import Path


class AdeptError(Exception):
    pass


# -- configuration --------------------------------------------------------

class ConfigError(AdeptError):
    """Base for problems with an input document."""

    def __init__(self, message: str, path: str | Path | None = None):
        self.path = str(path) if path is not None else None
        prefix = f"{self.path}: " if self.path else ""
        super().__init__(prefix + message)
        self.message = message


class FileMissing(ConfigError):
    pass


class ParseError(ConfigError):
    def __init__(self, message: str, path: str | Path | None = None, line: int | None = None):
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(message + where, path)


class ValidationError(ConfigError):
    """A document parsed but violates the schema. Always names the field."""

    def __init__(self, message: str, path: str | Path | None = None, field: str | None = None):
        self.field = field
        self.detail = message
        label = f"field '{field}': " if field else ""
        super().__init__(label + message, path)


class EmptyPanel(ConfigError):
    pass


# -- prompts / protocol ---------------------------------------------------

class IncompletePhase(AdeptError):
    pass


class IncompleteTrace(AdeptError):
    pass


class VoteParseError(AdeptError):
    pass


class NoVoteFound(VoteParseError):
    pass


class InvalidOption(VoteParseError):
    def __init__(self, option: int, legal: list[int]):
        self.option = option
        self.legal = legal
        super().__init__(f"vote for option {option} is not one of {legal}")


# -- backend --------------------------------------------------------------

RETRYABLE_KINDS = frozenset({"transport", "timeout", "rate_limited"})
BACKEND_ERROR_KINDS = frozenset(
    {
        "transport",
        "timeout",
        "auth",
        "rate_limited",
        "malformed_response",
        "context_overflow",
        "script_exhausted",
    }
)


class BackendError(AdeptError):
    """Failure of a completion call.

    ``retryable`` is derived from ``kind`` and cannot be set independently.
    When raised out of a debate run, ``partial_trace`` holds the aborted trace.
    """

    def __init__(self, kind: str, detail: str):
        if kind not in BACKEND_ERROR_KINDS:
            raise ValueError(f"unknown backend error kind {kind!r}")
        self.kind = kind
        self.detail = detail
        self.partial_trace = None
        super().__init__(f"{kind}: {detail}")

    @property
    def retryable(self) -> bool:
        return self.kind in RETRYABLE_KINDS


class ContextOverflow(BackendError):
    def __init__(self, detail: str):
        super().__init__("context_overflow", detail)


class MissingKey(AdeptError):
    pass


# -- persistence / analysis -----------------------------------------------

class TraceIoError(AdeptError):
    def __init__(self, message: str, path: str | Path):
        self.path = str(path)
        super().__init__(f"{self.path}: {message}")


class HashMismatch(AdeptError):
    pass


class UnsupportedVersion(AdeptError):
    pass


class ScenarioMismatch(AdeptError):
    pass
