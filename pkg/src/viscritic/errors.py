"""Exception hierarchy shared across the pipeline."""

from __future__ import annotations


class VisCriticError(Exception):
    """Base class for all pipeline errors."""


class InvariantError(VisCriticError):
    """A record or domain value violates a type invariant.

    Carries the offending field path so store rejections are actionable.
    """

    def __init__(self, field_path: str, message: str):
        self.field_path = field_path
        super().__init__(f"{field_path}: {message}")


class StageTransitionError(VisCriticError):
    """Illegal stage transition or malformed stage payload."""


class UnknownRecordError(VisCriticError):
    """Record id not present in the store."""


class TagParseError(VisCriticError):
    """Structured LLM reply could not be parsed."""


class MissingTagError(TagParseError):
    pass


class UnterminatedFenceError(TagParseError):
    pass


class PayloadError(TagParseError):
    """A tagged block's fenced payload is malformed (bad JSON, wrong shape)."""


class PromptError(VisCriticError):
    """Unknown template or incomplete placeholder bindings."""


class ProviderError(VisCriticError):
    """Permanent provider failure (auth, payload rejected, exhaustion)."""


class TransientProviderError(ProviderError):
    """Retryable provider failure (rate limit, timeout, 5xx)."""


class RetryExhaustedError(ProviderError):
    def __init__(self, attempts: int, last: Exception):
        self.attempts = attempts
        self.last = last
        super().__init__(f"gave up after {attempts} attempts: {last}")


class PolicyError(VisCriticError):
    """Call-site policy violation (e.g. nonzero temperature on a critic call)."""


class NotebookError(VisCriticError):
    """Unreadable or empty notebook container."""


class CycleError(VisCriticError):
    """Cell dependency cycle; carries the cycle path."""

    def __init__(self, cycle: list[str]):
        self.cycle = cycle
        super().__init__("cyclic dependency: " + " -> ".join(cycle + cycle[:1]))


class RenderError(VisCriticError):
    """Renderer backend unreachable or crashed."""


class PreviewError(VisCriticError):
    """Malformed data file that cannot be summarized."""


class TaskError(VisCriticError):
    """Annotation task lifecycle violation (unknown id, double submit)."""


class ConfigError(VisCriticError):
    """Invalid or unknown configuration."""
