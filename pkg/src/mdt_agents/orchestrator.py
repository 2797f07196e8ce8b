"""End-to-end MDT inference: fan out to specialists, join, detect conflicts, synthesize.

The core agent runs twice when the draft plan trips a contraindication rule:
once to propose a plan, then again with the new advisories in its context.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from .agents.backends import Backend, ChatRequest
from .agents.prompts import CORE_SYSTEM_PROMPT, CORE_TASK_TEMPLATE
from .agents.runtime import AgentSpec, call_backend, run_agent
from .case import ModalityKind, PatientCase
from .errors import ConfigError, MalformedReport, PipelineError
from .evidence import AgentStatus, EvidenceContainer
from .report import MdtReport, SECTION_KEYS, parse_report_sections
from .rules import (
    ConflictFlag,
    FlagKind,
    RuleTable,
    detect_conflicts,
    merge_flags,
)

logger = logging.getLogger(__name__)

AGENT_TITLES = {
    ModalityKind.TEXT: "Text Agent (EMR)",
    ModalityKind.ENDOSCOPY: "Endoscopy Agent",
    ModalityKind.RADIOLOGY: "Radiology Agent",
    ModalityKind.LABORATORY: "Laboratory Agent",
}
DEFERRAL_PHRASE = "pathological confirmation"
DEFERRAL_SENTENCE = (
    "Further pathological confirmation is recommended before any staging-dependent treatment is finalized."
)


@dataclass(frozen=True)
class PipelineConfig:
    agents: Mapping[ModalityKind, AgentSpec]
    core_backend: Backend
    enabled_agents: frozenset[ModalityKind] = frozenset(ModalityKind.ordered())
    conflict_detection_enabled: bool = True
    modality_priority: tuple[ModalityKind, ...] = ()
    two_pass_plan_check: bool = True
    parallel: bool = True
    core_timeout: float = 120.0
    core_max_retries: int = 2
    core_backoff: float = 0.5
    name: str = "full"

    def __post_init__(self) -> None:
        enabled = frozenset(self.enabled_agents)
        object.__setattr__(self, "enabled_agents", enabled)
        if not self.modality_priority:
            priority = tuple(m for m in ModalityKind.ordered() if m in enabled)
            object.__setattr__(self, "modality_priority", priority)
        priority = tuple(self.modality_priority)
        object.__setattr__(self, "modality_priority", priority)
        if len(set(priority)) != len(priority) or set(priority) != enabled:
            raise ConfigError("modality_priority must be a permutation of enabled_agents")
        for m in enabled:
            spec = self.agents.get(m)
            if spec is None:
                raise ConfigError(f"no AgentSpec for enabled modality {m.value}")
            if spec.modality is not m:
                raise ConfigError(f"AgentSpec keyed {m.value} is for {spec.modality.value}")

    def without(self, modality: ModalityKind) -> "PipelineConfig":
        return dataclasses.replace(
            self,
            enabled_agents=self.enabled_agents - {modality},
            modality_priority=tuple(m for m in self.modality_priority if m is not modality),
            name=f"w/o {modality.value}",
        )

    def without_conflict_detection(self) -> "PipelineConfig":
        return dataclasses.replace(self, conflict_detection_enabled=False, name="w/o conflict detection")

    def describe(self) -> dict[str, Any]:
        """JSON-able summary used for configuration fingerprints."""
        return {
            "enabled_agents": sorted(m.value for m in self.enabled_agents),
            "modality_priority": [m.value for m in self.modality_priority],
            "conflict_detection_enabled": self.conflict_detection_enabled,
            "two_pass_plan_check": self.two_pass_plan_check,
            "parallel": self.parallel,
            "core_backend": self.core_backend.describe(),
            "core_timeout": self.core_timeout,
            "core_max_retries": self.core_max_retries,
            "agents": {
                m.value: {
                    "backend": s.backend.describe(),
                    "timeout": s.timeout,
                    "max_retries": s.max_retries,
                    "role_prompt": s.role_prompt,
                    "task_template": s.task_template,
                    "vqa": list(s.battery.questions),
                }
                for m, s in sorted(self.agents.items(), key=lambda kv: kv[0].value)
                if m in self.enabled_agents
            },
        }


@dataclass
class PipelineRun:
    report: MdtReport
    context: str
    evidence: EvidenceContainer
    stage_log: list[dict[str, Any]] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Fan-out / fan-in
# ---------------------------------------------------------------------------


def dispatch_all(case: PatientCase, config: PipelineConfig) -> EvidenceContainer:
    """Run every enabled specialist and join the states by modality."""
    enabled = [m for m in config.modality_priority]
    evidence = EvidenceContainer(enabled)
    if not enabled:
        return evidence
    if config.parallel:
        with ThreadPoolExecutor(max_workers=len(enabled), thread_name_prefix=f"agents-{case.case_id}") as pool:
            futures = [pool.submit(run_agent, config.agents[m], case) for m in enabled]
            for future in as_completed(futures):
                evidence.add(future.result())
    else:
        for m in enabled:
            evidence.add(run_agent(config.agents[m], case))
    return evidence


def build_context(
    evidence: EvidenceContainer, flags: Sequence[ConflictFlag], priority: Sequence[ModalityKind]
) -> str:
    """Concatenate specialist findings in priority order, then the advisories."""
    if not evidence.synchronized:
        raise ValueError("evidence container is not synchronized")
    blocks = []
    for modality in priority:
        state = evidence.get(modality)
        if state is None:
            continue
        title = AGENT_TITLES[modality]
        if state.ok:
            body = state.findings_text
            if state.confidence is not None:
                body += f"\n(reported confidence: {state.confidence:g})"
        else:
            body = f"[{modality.value} findings unavailable: agent status {state.status.value}]"
        blocks.append(f"## {title}\n{body}")
    context = "# Specialist findings\n\n" + "\n\n".join(blocks) if blocks else "# Specialist findings\n\n(none)"
    if flags:
        context += "\n\n# Advisories\n" + "\n".join(f"- {f.advisory}" for f in flags)
    return context


# ---------------------------------------------------------------------------
# Core generation
# ---------------------------------------------------------------------------


def _generate(config: PipelineConfig, case: PatientCase, context: str, role: str) -> str:
    request = ChatRequest(
        system=CORE_SYSTEM_PROMPT,
        user=CORE_TASK_TEMPLATE.format(context=context),
        case_id=case.case_id,
        role=role,
    )
    outcome = call_backend(
        config.core_backend,
        request,
        timeout=config.core_timeout,
        max_retries=config.core_max_retries,
        backoff=config.core_backoff,
    )
    if outcome.status is not AgentStatus.OK:
        raise PipelineError(
            f"core agent {outcome.status.value} on {case.case_id}: {outcome.error}",
            context=context,
            diagnostics=(
                f"role={role} status={outcome.status.value} attempts={outcome.attempts} "
                f"latency={outcome.latency:.3f}s error={outcome.error}"
                + (f"\nraw output:\n{outcome.raw}" if outcome.raw else "")
            ),
        )
    return outcome.text


def _draft_plan(text: str) -> str:
    try:
        return parse_report_sections(text).sections["plan"]
    except MalformedReport:
        return text


def _enforce_flag_surfacing(sections: dict[str, str], flags: Sequence[ConflictFlag]) -> bool:
    """Make every advisory appear verbatim in evidence or plan; return deferral."""
    missing = [f.advisory for f in flags if f.advisory not in sections["evidence"] and f.advisory not in sections["plan"]]
    if missing:
        sections["evidence"] = sections["evidence"].rstrip() + "\n\nConflict advisories:\n" + "\n".join(
            f"- {a}" for a in missing
        )
    discrepancy = any(f.kind is FlagKind.STAGING_DISCREPANCY for f in flags)
    if discrepancy and DEFERRAL_PHRASE not in sections["plan"].lower():
        sections["plan"] = sections["plan"].rstrip() + "\n" + DEFERRAL_SENTENCE
    return discrepancy or DEFERRAL_PHRASE in sections["plan"].lower()


def execute(case: PatientCase, config: PipelineConfig, rules: RuleTable) -> PipelineRun:
    """Run the full pipeline and keep the intermediate artifacts."""
    stage_log: list[dict[str, Any]] = []
    timings: dict[str, float] = {}

    def log_stage(stage: str, started: float, **extra: Any) -> None:
        duration = time.perf_counter() - started
        timings[stage] = duration
        record = {"case_id": case.case_id, "stage": stage, "duration_s": round(duration, 6), **extra}
        stage_log.append(record)
        logger.info(json.dumps(record, sort_keys=True))

    t = time.perf_counter()
    evidence = dispatch_all(case, config)
    log_stage("dispatch", t, statuses={m.value: s.status.value for m, s in evidence.states.items()})
    for m, s in evidence.states.items():
        timings[f"agent.{m.value}"] = s.latency

    flags: list[ConflictFlag] = []
    if config.conflict_detection_enabled:
        t = time.perf_counter()
        flags = detect_conflicts(evidence, None, rules)
        log_stage("staging_check", t, flags=[f.kind.value for f in flags])

    t = time.perf_counter()
    context = build_context(evidence, flags, config.modality_priority)
    draft = _generate(config, case, context, "core")
    log_stage("core_draft", t)
    final_text = draft

    if config.conflict_detection_enabled:
        t = time.perf_counter()
        plan = _draft_plan(draft)
        new = [f for f in detect_conflicts(evidence, plan, rules) if f not in flags]
        log_stage("plan_check", t, new_flags=[f.kind.value for f in new])
        if new:
            flags = merge_flags(flags, new)
            if config.two_pass_plan_check:
                t = time.perf_counter()
                context = build_context(evidence, flags, config.modality_priority)
                final_text = _generate(config, case, context, "core.final")
                log_stage("core_final", t)

    try:
        parsed = parse_report_sections(final_text)
    except MalformedReport as exc:
        raise PipelineError(f"core output for {case.case_id} is malformed: {exc}", context=context,
                            diagnostics=final_text) from exc

    sections = dict(parsed.sections)
    deferral = _enforce_flag_surfacing(sections, flags)
    contributing = [m.value for m in config.modality_priority if evidence.ok_state(m) is not None]
    report = MdtReport(
        case_id=case.case_id,
        sections=sections,
        flags=list(flags),
        deferral=deferral,
        provenance={k: list(contributing) for k in SECTION_KEYS},
        warnings=list(parsed.warnings),
        timings=timings,
    )
    return PipelineRun(report=report, context=context, evidence=evidence, stage_log=stage_log)


def run_pipeline(case: PatientCase, config: PipelineConfig, rules: RuleTable) -> MdtReport:
    return execute(case, config, rules).report


def run_many(
    cases: Iterable[PatientCase], config: PipelineConfig, rules: RuleTable, max_workers: int = 4
) -> dict[str, MdtReport | PipelineError]:
    """Run independent cases concurrently; failures are returned, not raised."""
    cases = list(cases)

    def one(case: PatientCase) -> MdtReport | PipelineError:
        try:
            return run_pipeline(case, config, rules)
        except PipelineError as exc:
            return exc

    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        results = list(pool.map(one, cases))
    return {c.case_id: r for c, r in zip(cases, results)}
