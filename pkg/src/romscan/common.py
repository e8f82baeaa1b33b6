"""Shared error types and the diagnostic record used across all analysis stages."""

from __future__ import annotations

from dataclasses import dataclass, field


class RomScanError(Exception):
    """Base class for all scanner errors."""


class IngestError(RomScanError):
    """Raised when a ROM tree cannot be read or classified."""


class SmaliParseError(RomScanError):
    """Raised for structurally broken smali input (missing header, unbalanced blocks)."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        loc = ""
        if path is not None:
            loc = f"{path}:"
        if line is not None:
            loc = f"{loc}{line}:"
        super().__init__(f"{loc} {message}" if loc else message)


class PolicyParseError(RomScanError):
    """Raised for unreadable SELinux policy input (unbalanced parentheses, bad dump lines)."""

    def __init__(self, message: str, path: str | None = None, offset: int | None = None):
        self.path = path
        self.offset = offset
        loc = ""
        if path is not None:
            loc = f"{path}"
        if offset is not None:
            loc = f"{loc}@byte {offset}" if loc else f"byte {offset}"
        super().__init__(f"{loc}: {message}" if loc else message)


class ConfigError(RomScanError):
    """Raised for invalid scanner configuration."""


class SimSpecError(RomScanError):
    """Raised when a simulated device description violates its own invariants."""


@dataclass(frozen=True)
class Diagnostic:
    """A non-fatal problem noticed during analysis.

    Diagnostics never abort a scan; they are collected and reported so that
    skipped inputs and discarded code sites stay visible.
    """

    code: str
    message: str
    source: str = ""

    def to_dict(self) -> dict:
        return {"code": self.code, "message": self.message, "source": self.source}


@dataclass
class DiagnosticSink:
    """Mutable collector threaded through the analysis stages."""

    items: list[Diagnostic] = field(default_factory=list)

    def emit(self, code: str, message: str, source: str = "") -> None:
        self.items.append(Diagnostic(code=code, message=message, source=source))

    def extend(self, other: "DiagnosticSink") -> None:
        self.items.extend(other.items)

    def sorted_dicts(self) -> list[dict]:
        return [d.to_dict() for d in sorted(self.items, key=lambda d: (d.source, d.code, d.message))]
