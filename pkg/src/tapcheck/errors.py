"""Shared error types; parse-stage errors carry a source location."""

from dataclasses import dataclass


@dataclass(frozen=True)
class SourceLoc:
    line: int
    col: int
    file: str = "<input>"

    def __str__(self) -> str:
        return f"{self.file}:{self.line}:{self.col}"


class TapError(Exception):
    """Base class for all toolchain errors."""

    def __init__(self, message: str, loc: SourceLoc | None = None):
        self.message = message
        self.loc = loc
        super().__init__(f"{loc}: {message}" if loc else message)


class ParseError(TapError):
    pass


class RuleError(TapError):
    """A structurally malformed rule (bad latency, empty actions, ...)."""


class BindError(TapError):
    """Name resolution or typing failure against catalog/deployment."""


class AnalysisLimitError(TapError):
    """An enumeration or search exceeded a configured bound."""
