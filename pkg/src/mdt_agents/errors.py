"""Exception hierarchy shared across the package."""

from __future__ import annotations


class MdtError(Exception):
    """Base class for every error raised by mdt_agents."""


class IngestionError(MdtError):
    """A case document or input table failed validation."""


class ConfigError(MdtError):
    """Invalid configuration (proportions, rule tables, pipeline settings)."""


class IncomparableStages(MdtError):
    """At least one staging claim has no comparable T category (TX or absent)."""


class AgentSkipped(MdtError):
    """The case carries no payload for the agent's modality."""


class BackendError(MdtError):
    """Base class for backend call failures."""


class TransportError(BackendError):
    """Transient failure talking to a backend; eligible for retry."""


class BackendTimeout(BackendError):
    """The backend did not answer within the deadline."""


class MalformedResponse(BackendError):
    """The backend answered, but the payload could not be used."""

    def __init__(self, message: str, raw: str = "") -> None:
        super().__init__(message)
        self.raw = raw


class MalformedReport(MdtError):
    """Core output contained no recognizable report section headers."""


class PipelineError(MdtError):
    """The core agent could not produce a report.

    The assembled context is attached so a failed run can be inspected.
    """

    def __init__(self, message: str, context: str = "", diagnostics: str = "") -> None:
        super().__init__(message)
        self.context = context
        self.diagnostics = diagnostics


class EvaluationError(MdtError):
    """Evaluation inputs were empty or malformed."""


class CurationError(MdtError):
    """Curation inputs violate a precondition."""


class SplitContaminationError(CurationError):
    """Samples from non-training splits were offered for export."""

    def __init__(self, offending: list[str]) -> None:
        super().__init__(
            "refusing to export: case_ids outside the training split: " + ", ".join(offending)
        )
        self.offending = offending
