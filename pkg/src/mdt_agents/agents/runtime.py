"""Specialist agent specs, invocation with retries, and response postprocessing."""

from __future__ import annotations

import logging
import re
import time
from dataclasses import dataclass, field
from typing import Callable

from ..case import AliasTable, LabPanel, LabResult, ModalityKind, PatientCase, default_aliases
from ..errors import AgentSkipped, BackendTimeout, MalformedResponse, TransportError
from ..evidence import AgentStatus, IntermediateState
from ..staging import DepthTable, extract_claims
from .backends import Backend, ChatRequest
from .prompts import ROLE_PROMPTS, TASK_TEMPLATES, VqaBattery, task_fields

logger = logging.getLogger(__name__)

STAGING_MODALITIES = frozenset({ModalityKind.ENDOSCOPY, ModalityKind.RADIOLOGY})


@dataclass(frozen=True)
class AgentSpec:
    modality: ModalityKind
    backend: Backend
    role_prompt: str = ""
    task_template: str = ""
    timeout: float = 60.0
    max_retries: int = 2
    backoff: float = 0.5
    battery: VqaBattery = field(default_factory=VqaBattery)
    depth_table: DepthTable | None = None
    aliases: AliasTable | None = None

    def __post_init__(self) -> None:
        if not self.role_prompt:
            object.__setattr__(self, "role_prompt", ROLE_PROMPTS[self.modality])
        if not self.task_template:
            object.__setattr__(self, "task_template", TASK_TEMPLATES[self.modality])
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")


def default_specs(
    backend_for: Callable[[ModalityKind], Backend], **overrides
) -> dict[ModalityKind, AgentSpec]:
    return {m: AgentSpec(modality=m, backend=backend_for(m), **overrides) for m in ModalityKind.ordered()}


@dataclass(frozen=True)
class RenderedPrompt:
    modality: ModalityKind
    case_id: str
    system: str
    user: str
    images: tuple[str, ...] = ()
    lab_panel: LabPanel | None = None

    def request(self) -> ChatRequest:
        return ChatRequest(
            system=self.system,
            user=self.user,
            images=self.images,
            case_id=self.case_id,
            role=self.modality.value,
        )


def render_prompt(spec: AgentSpec, case: PatientCase) -> RenderedPrompt:
    """Fill the agent's templates from the case payload.

    Raises:
        AgentSkipped: the case has nothing for this modality.
    """
    if not case.has_payload(spec.modality):
        raise AgentSkipped(f"{case.case_id}: no {spec.modality.value} payload")
    user = spec.task_template.format_map(task_fields(spec.modality, case, spec.battery))
    images = case.endoscopy.frames if spec.modality is ModalityKind.ENDOSCOPY and case.endoscopy else ()
    return RenderedPrompt(
        modality=spec.modality,
        case_id=case.case_id,
        system=spec.role_prompt,
        user=user,
        images=tuple(images),
        lab_panel=case.lab_panel if spec.modality is ModalityKind.LABORATORY else None,
    )


# ---------------------------------------------------------------------------
# Calling a backend
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CallOutcome:
    status: AgentStatus
    text: str
    attempts: int
    latency: float
    error: str = ""
    raw: str = ""


def call_backend(
    backend: Backend,
    request: ChatRequest,
    *,
    timeout: float | None,
    max_retries: int,
    backoff: float = 0.5,
    sleep: Callable[[float], None] = time.sleep,
) -> CallOutcome:
    """Call ``backend`` with exponential backoff on transport errors.

    ``timeout`` bounds the whole call including retries. Never raises for
    backend problems; the outcome status says what happened.
    """
    start = time.monotonic()
    deadline = None if timeout is None else start + timeout
    attempts = 0

    def done(status: AgentStatus, text: str = "", error: str = "", raw: str = "") -> CallOutcome:
        return CallOutcome(status, text, attempts, time.monotonic() - start, error, raw)

    while True:
        remaining = None if deadline is None else deadline - time.monotonic()
        if remaining is not None and remaining <= 0:
            return done(AgentStatus.TIMED_OUT, error="deadline exceeded")
        attempts += 1
        try:
            text = backend.complete(request, timeout=remaining)
        except BackendTimeout as exc:
            return done(AgentStatus.TIMED_OUT, error=f"timeout: {exc}")
        except TransportError as exc:
            if attempts > max_retries:
                return done(AgentStatus.FAILED, error=f"transport failure after {attempts} attempts: {exc}")
            delay = backoff * 2 ** (attempts - 1)
            if deadline is not None and time.monotonic() + delay >= deadline:
                return done(AgentStatus.TIMED_OUT, error=f"deadline reached while retrying: {exc}")
            logger.debug("retrying %s/%s in %.3fs: %s", request.case_id, request.role, delay, exc)
            sleep(delay)
            continue
        except MalformedResponse as exc:
            return done(AgentStatus.FAILED, error=f"malformed response: {exc}", raw=exc.raw)
        if not isinstance(text, str) or not text.strip():
            return done(AgentStatus.FAILED, error="malformed response: empty", raw=repr(text))
        return done(AgentStatus.OK, text=text)


# ---------------------------------------------------------------------------
# Postprocessing
# ---------------------------------------------------------------------------

_CONFIDENCE_LINE = re.compile(r"^[ \t]*confidence[ \t]*[:=][ \t]*(?P<v>[0-9]*\.?[0-9]+)[ \t]*(?P<pct>%)?[ \t]*$",
                              re.IGNORECASE | re.MULTILINE)


def split_confidence(text: str) -> tuple[str, float | None]:
    """Strip a ``confidence: x`` line from ``text`` and return its value.

    Percentages are scaled to [0, 1]; values outside that range are dropped.
    """
    match = _CONFIDENCE_LINE.search(text)
    if not match:
        return text.strip(), None
    value = float(match.group("v"))
    if match.group("pct"):
        value /= 100.0
    body = (text[: match.start()] + text[match.end() :]).strip()
    body = re.sub(r"\n{3,}", "\n\n", body)
    return body, value if 0.0 <= value <= 1.0 else None


def mentioned_results(text: str, panel: LabPanel, aliases: AliasTable | None = None) -> tuple[LabResult, ...]:
    """Panel results whose analyte (or one of its aliases) appears in ``text``."""
    table = aliases or default_aliases()
    by_canonical: dict[str, set[str]] = {}
    for alias, canonical in table.items():
        by_canonical.setdefault(canonical, set()).add(alias)
    hits = []
    for result in panel.results:
        names = {result.analyte} | by_canonical.get(result.analyte, set())
        for name in sorted(names, key=len, reverse=True):
            body = r"\s+".join(map(re.escape, name.split()))
            if re.search(rf"(?<![A-Za-z0-9]){body}(?![A-Za-z0-9])", text, re.IGNORECASE):
                hits.append(result)
                break
    return tuple(hits)


def postprocess(spec: AgentSpec, prompt: RenderedPrompt, outcome: CallOutcome) -> IntermediateState:
    if outcome.status is not AgentStatus.OK:
        return IntermediateState(
            modality=spec.modality,
            status=outcome.status,
            raw_response=outcome.raw,
            latency=outcome.latency,
            attempts=outcome.attempts,
            error=outcome.error,
        )
    findings, confidence = split_confidence(outcome.text)
    claims = extract_claims(findings, spec.modality, spec.depth_table) if spec.modality in STAGING_MODALITIES else []
    highlights: tuple[LabResult, ...] = ()
    if spec.modality is ModalityKind.LABORATORY and prompt.lab_panel is not None:
        highlights = mentioned_results(findings, prompt.lab_panel, spec.aliases)
    return IntermediateState(
        modality=spec.modality,
        status=AgentStatus.OK,
        findings_text=findings,
        claims=tuple(claims),
        lab_highlights=highlights,
        lab_panel=prompt.lab_panel,
        confidence=confidence,
        raw_response=outcome.text,
        latency=outcome.latency,
        attempts=outcome.attempts,
    )


def invoke(spec: AgentSpec, prompt: RenderedPrompt) -> IntermediateState:
    """Run one specialist on a rendered prompt; never raises for backend trouble."""
    outcome = call_backend(
        spec.backend,
        prompt.request(),
        timeout=spec.timeout,
        max_retries=spec.max_retries,
        backoff=spec.backoff,
    )
    if outcome.status is not AgentStatus.OK:
        logger.warning("%s agent %s for %s: %s", spec.modality.value, outcome.status.value, prompt.case_id, outcome.error)
    return postprocess(spec, prompt, outcome)


def skipped_state(modality: ModalityKind, reason: str = "") -> IntermediateState:
    return IntermediateState(modality=modality, status=AgentStatus.SKIPPED, error=reason)


def run_agent(spec: AgentSpec, case: PatientCase) -> IntermediateState:
    try:
        prompt = render_prompt(spec, case)
    except AgentSkipped as exc:
        return skipped_state(spec.modality, str(exc))
    try:
        return invoke(spec, prompt)
    except Exception as exc:  # degraded mode: an agent bug must not abort the case
        logger.exception("%s agent crashed on %s", spec.modality.value, case.case_id)
        return IntermediateState(modality=spec.modality, status=AgentStatus.FAILED, error=f"agent error: {exc}")
