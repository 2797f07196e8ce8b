"""Specialist outputs and the evidence container that joins them."""

from __future__ import annotations

import threading
from dataclasses import dataclass
from enum import Enum
from typing import Any, Iterable

from .case import LabPanel, LabResult, ModalityKind
from .staging import StagingClaim


class AgentStatus(str, Enum):
    OK = "Ok"
    FAILED = "Failed"
    TIMED_OUT = "TimedOut"
    SKIPPED = "Skipped"


@dataclass(frozen=True)
class IntermediateState:
    """One specialist agent's structured output for one case.

    ``lab_panel`` is the normalized table the Laboratory agent was given; the
    rule engine reads lab values from it rather than from model wording.
    """

    modality: ModalityKind
    status: AgentStatus
    findings_text: str = ""
    claims: tuple[StagingClaim, ...] = ()
    lab_highlights: tuple[LabResult, ...] = ()
    lab_panel: LabPanel | None = None
    confidence: float | None = None
    raw_response: str = ""
    latency: float = 0.0
    attempts: int = 0
    error: str = ""

    def __post_init__(self) -> None:
        if self.status is not AgentStatus.OK and (self.findings_text or self.claims):
            raise ValueError("non-Ok states carry no findings or claims")
        if self.confidence is not None and not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence out of range: {self.confidence}")

    @property
    def ok(self) -> bool:
        return self.status is AgentStatus.OK

    def to_dict(self, include_timing: bool = False) -> dict[str, Any]:
        out: dict[str, Any] = {
            "modality": self.modality.value,
            "status": self.status.value,
            "findings_text": self.findings_text,
            "claims": [c.to_dict() for c in self.claims],
            "lab_highlights": [r.to_dict(with_flag=True) for r in self.lab_highlights],
            "lab_panel": None
            if self.lab_panel is None
            else [r.to_dict(with_flag=True) for r in self.lab_panel.results],
            "confidence": self.confidence,
            "raw_response": self.raw_response,
            "attempts": self.attempts,
            "error": self.error,
        }
        if include_timing:
            out["latency"] = self.latency
        return out


class EvidenceContainer:
    """Modality-keyed join point for specialist outputs.

    States may arrive from several threads; the container keys them by
    modality so arrival order never matters.
    """

    def __init__(self, dispatched: Iterable[ModalityKind] = ()) -> None:
        self._lock = threading.Lock()
        self._states: dict[ModalityKind, IntermediateState] = {}
        self.dispatched: frozenset[ModalityKind] = frozenset(dispatched)

    def add(self, state: IntermediateState) -> None:
        with self._lock:
            if state.modality not in self.dispatched:
                raise ValueError(f"{state.modality.value} was not dispatched")
            if state.modality in self._states:
                raise ValueError(f"duplicate state for {state.modality.value}")
            self._states[state.modality] = state

    @property
    def completed(self) -> frozenset[ModalityKind]:
        with self._lock:
            return frozenset(self._states)

    @property
    def synchronized(self) -> bool:
        return self.completed == self.dispatched

    @property
    def states(self) -> dict[ModalityKind, IntermediateState]:
        with self._lock:
            return {m: self._states[m] for m in ModalityKind.ordered() if m in self._states}

    def get(self, modality: ModalityKind) -> IntermediateState | None:
        with self._lock:
            return self._states.get(modality)

    def ok_state(self, modality: ModalityKind) -> IntermediateState | None:
        state = self.get(modality)
        return state if state is not None and state.ok else None

    def to_dict(self, include_timing: bool = False) -> dict[str, Any]:
        return {m.value: s.to_dict(include_timing) for m, s in self.states.items()}
