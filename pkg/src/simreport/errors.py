"""Shared exception types for the simreport package."""

from __future__ import annotations


class SimReportError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(SimReportError):
    """A configuration value or file violates its contract."""


class IoError(SimReportError):
    """A filesystem operation failed (unwritable directory, unreadable file)."""


class IngestError(SimReportError):
    """On-disk input data violates the corpus contracts.

    ``line`` carries the 1-based line number for line-oriented formats;
    ``missing`` lists every referenced path that does not exist.
    """

    def __init__(self, message: str, *, line: int | None = None,
                 missing: list[str] | None = None):
        super().__init__(message)
        self.line = line
        self.missing = list(missing) if missing else []


class TransportError(SimReportError):
    """Network-level failure after exhausting retries."""

    def __init__(self, message: str, *, attempts: int):
        super().__init__(message)
        self.attempts = attempts


class BackendError(SimReportError):
    """The chat backend answered with a non-2xx status or a malformed body."""

    def __init__(self, message: str, *, status: int | None = None,
                 body_excerpt: str = ""):
        super().__init__(message)
        self.status = status
        self.body_excerpt = body_excerpt


class AuthError(SimReportError):
    """The configured API key environment variable is not set."""


class MockMismatch(SimReportError):
    """A scripted mock reply was pinned to a different prompt than the one received."""


class MockExhausted(SimReportError):
    """The mock script ran out of replies."""


class TemplateError(SimReportError):
    """A prompt template violates the placeholder/required-vars contract."""


class UnknownTemplate(SimReportError):
    """No template registered under the requested id."""


class MissingVariable(SimReportError):
    """render_prompt was called without one or more required variables."""

    def __init__(self, missing: list[str]):
        super().__init__("missing template variable(s): " + ", ".join(missing))
        self.missing = list(missing)


class ChartError(SimReportError):
    """A chart specification violates its invariants."""


class MetricError(SimReportError):
    """Event data is inconsistent with the metric being computed."""


class ToolParseError(SimReportError):
    """A tool fence could not be parsed into a valid tool call.

    ``block`` carries the offending fence content verbatim so a reflection
    prompt can show the model exactly what it wrote.
    """

    def __init__(self, message: str, *, block: str = ""):
        super().__init__(message)
        self.block = block


class ToolError(SimReportError):
    """A tool failed while executing; the cause is chained."""


class ExtractionFailed(SimReportError):
    """Structured extraction kept failing validation after all retries.

    ``attempts`` holds one list of validation errors per attempt.
    """

    def __init__(self, message: str, *, attempts: list[list[str]]):
        super().__init__(message)
        self.attempts = [list(a) for a in attempts]


class RenderError(SimReportError):
    """A report bundle violates an assembly invariant."""


class ScoreError(SimReportError):
    """A score value or score set violates the rubric contract."""


class JudgeParseError(SimReportError):
    """An LLM judge reply could not be parsed into aspect scores after a retry."""
