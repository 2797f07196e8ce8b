"""Training-data curation: reverse decomposition jobs, contradiction filter,
audit sampling and split-safe export."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from decimal import Decimal
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .agents.backends import Backend, ChatRequest
from .agents.prompts import ROLE_PROMPTS, TASK_TEMPLATES, render_lab_table
from .agents.runtime import call_backend
from .case import AliasTable, DatasetSplit, LabPanel, ModalityKind, PatientCase, default_aliases
from .errors import ConfigError, CurationError, SplitContaminationError
from .evidence import AgentStatus
from .staging import extract_claims, representative_claim, staging_discrepancy

logger = logging.getLogger(__name__)

DECOMPOSITION_TEMPLATE = (
    "Act as a senior medical editor. The final MDT report below was agreed for this patient. "
    "Reconstruct the intermediate summary the {modality} specialist should have written from the "
    "raw {modality} input alone. Keep every statement consistent with the final report and do "
    "not introduce findings that are absent from the raw input.\n\n"
    "Raw {modality} input:\n{input_payload}\n\n"
    "Final MDT report:\n{source_report}"
)


class FilterStatus(str, Enum):
    PASSED = "Passed"
    REJECTED_CONTRADICTION = "RejectedContradiction"


class AuditStatus(str, Enum):
    NOT_SAMPLED = "NotSampled"
    SAMPLED = "Sampled"
    VERIFIED = "Verified"
    REJECTED = "Rejected"


@dataclass(frozen=True)
class DecompositionJob:
    case_id: str
    source_report: str
    target_modality: ModalityKind
    input_payload: str
    teacher_backend: Backend
    prompt_template: str = DECOMPOSITION_TEMPLATE

    def request(self) -> ChatRequest:
        user = self.prompt_template.format(
            modality=self.target_modality.value,
            input_payload=self.input_payload,
            source_report=self.source_report,
        )
        return ChatRequest(
            system="You reconstruct specialist reasoning for training data.",
            user=user,
            case_id=self.case_id,
            role=f"teacher.{self.target_modality.value}",
        )


@dataclass(frozen=True)
class CuratedSample:
    case_id: str
    modality: ModalityKind
    input_payload: str
    generated_summary: str
    filter_status: FilterStatus | None = None
    audit_status: AuditStatus = AuditStatus.NOT_SAMPLED

    @property
    def sample_id(self) -> str:
        return f"{self.case_id}:{self.modality.value}"

    def to_dict(self) -> dict[str, Any]:
        return {
            "sample_id": self.sample_id,
            "case_id": self.case_id,
            "modality": self.modality.value,
            "input_payload": self.input_payload,
            "generated_summary": self.generated_summary,
            "filter_status": None if self.filter_status is None else self.filter_status.value,
            "audit_status": self.audit_status.value,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "CuratedSample":
        return cls(
            case_id=doc["case_id"],
            modality=ModalityKind(doc["modality"]),
            input_payload=doc["input_payload"],
            generated_summary=doc["generated_summary"],
            filter_status=None if doc.get("filter_status") is None else FilterStatus(doc["filter_status"]),
            audit_status=AuditStatus(doc.get("audit_status", AuditStatus.NOT_SAMPLED.value)),
        )


def modality_payload(case: PatientCase, modality: ModalityKind) -> str:
    if modality is ModalityKind.TEXT:
        return case.emr_text
    if modality is ModalityKind.RADIOLOGY:
        return case.radiology_report
    if modality is ModalityKind.LABORATORY:
        return render_lab_table(case.lab_panel)
    if case.endoscopy is None:
        return ""
    head = f"site: {case.endoscopy.site_hint}\n" if case.endoscopy.site_hint else ""
    return head + "\n".join(case.endoscopy.frames)


# ---------------------------------------------------------------------------
# Decomposition
# ---------------------------------------------------------------------------


def build_decomposition_jobs(
    cases: Iterable[PatientCase], teacher: Backend, template: str = DECOMPOSITION_TEMPLATE
) -> list[DecompositionJob]:
    """One job per (case, modality) for cases that carry a verified final report."""
    jobs = []
    for case in cases:
        if not case.ground_truth_report:
            logger.warning("case %s has no final report; skipped", case.case_id)
            continue
        for modality in case.available_modalities():
            jobs.append(
                DecompositionJob(
                    case_id=case.case_id,
                    source_report=case.ground_truth_report,
                    target_modality=modality,
                    input_payload=modality_payload(case, modality),
                    teacher_backend=teacher,
                    prompt_template=template,
                )
            )
    return jobs


def run_decomposition(
    jobs: Sequence[DecompositionJob], max_workers: int = 4, timeout: float = 120.0, max_retries: int = 2
) -> list[CuratedSample]:
    """Call the teacher for each job; failed jobs produce no sample."""

    def one(job: DecompositionJob) -> CuratedSample | None:
        outcome = call_backend(job.teacher_backend, job.request(), timeout=timeout, max_retries=max_retries)
        if outcome.status is not AgentStatus.OK:
            logger.warning("teacher failed for %s/%s: %s", job.case_id, job.target_modality.value, outcome.error)
            return None
        return CuratedSample(job.case_id, job.target_modality, job.input_payload, outcome.text.strip())

    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        results = list(pool.map(one, jobs))
    return [s for s in results if s is not None]


# ---------------------------------------------------------------------------
# Contradiction filter
# ---------------------------------------------------------------------------


def _mentioned_values(text: str, panel: LabPanel, aliases: AliasTable) -> list[tuple[str, float]]:
    by_canonical: dict[str, set[str]] = {}
    for alias, canonical in aliases.items():
        by_canonical.setdefault(canonical, set()).add(alias)
    found = []
    for result in panel.results:
        names = {result.analyte} | by_canonical.get(result.analyte, set())
        for name in sorted(names, key=len, reverse=True):
            body = r"\s+".join(map(re.escape, name.split()))
            pattern = rf"(?<![A-Za-z0-9]){body}(?![A-Za-z0-9])\s*(?:level|value|of|was|is|[:=(])?\s*(-?\d+(?:\.\d+)?)"
            for m in re.finditer(pattern, text, re.IGNORECASE):
                found.append((result.analyte, float(m.group(1))))
    return found


def contradiction_filter(
    sample: CuratedSample,
    source_report: str,
    panel: LabPanel | None = None,
    tolerance: float = 0.05,
    aliases: AliasTable | None = None,
) -> FilterStatus:
    """Reject summaries that contradict the final report's staging or the lab panel.

    Staging uses the same representative-claim rule as cross-modal conflict
    detection. A lab value contradicts the panel when its relative difference
    exceeds ``tolerance``.
    """
    if not sample.generated_summary.strip():
        raise CurationError(f"{sample.sample_id}: empty generated summary")
    summary_claim = representative_claim(extract_claims(sample.generated_summary, sample.modality))
    report_claim = representative_claim(extract_claims(source_report, ModalityKind.TEXT))
    if summary_claim is not None and report_claim is not None:
        if staging_discrepancy(summary_claim, report_claim) is not None:
            return FilterStatus.REJECTED_CONTRADICTION

    if panel is not None:
        for analyte, value in _mentioned_values(sample.generated_summary, panel, aliases or default_aliases()):
            actual = panel.get(analyte)
            if actual is None:
                continue
            if abs(value - actual.value) > tolerance * max(abs(actual.value), 1e-9):
                return FilterStatus.REJECTED_CONTRADICTION
    return FilterStatus.PASSED


def filter_samples(
    samples: Iterable[CuratedSample], cases: Mapping[str, PatientCase], tolerance: float = 0.05
) -> list[CuratedSample]:
    out = []
    for s in samples:
        case = cases[s.case_id]
        status = contradiction_filter(s, case.ground_truth_report or "", case.lab_panel, tolerance)
        out.append(dataclasses.replace(s, filter_status=status))
    return out


# ---------------------------------------------------------------------------
# Audit sampling
# ---------------------------------------------------------------------------


def audit_count(n: int, rate: float) -> int:
    """``ceil(rate * n)`` computed on the decimal value of ``rate``."""
    if not 0 < rate <= 1:
        raise ConfigError(f"audit rate must be in (0, 1], got {rate}")
    return math.ceil(Decimal(str(rate)) * n)


def audit_sample(samples: Sequence[CuratedSample], rate: float, seed: int) -> list[CuratedSample]:
    """Mark ``ceil(rate * N)`` samples as Sampled, round-robin across modalities.

    Selection is uniform within each modality and deterministic under ``seed``.
    """
    k = audit_count(len(samples), rate)
    rng = random.Random(seed)
    groups: dict[ModalityKind, list[int]] = {}
    for i, s in enumerate(samples):
        groups.setdefault(s.modality, []).append(i)
    queues = []
    for modality in ModalityKind.ordered():
        if modality in groups:
            idx = list(groups[modality])
            rng.shuffle(idx)
            queues.append(idx)
    chosen: set[int] = set()
    while len(chosen) < k:
        for q in queues:
            if q and len(chosen) < k:
                chosen.add(q.pop())
    return [
        dataclasses.replace(s, audit_status=AuditStatus.SAMPLED) if i in chosen else s
        for i, s in enumerate(samples)
    ]


def load_review_file(path: str | Path) -> dict[str, AuditStatus]:
    """Read ``sample_id,verdict`` rows where verdict is Verified or Rejected."""
    reviews: dict[str, AuditStatus] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].startswith("#") or (lineno == 1 and row[0].strip() == "sample_id"):
                continue
            if len(row) != 2 or row[1].strip() not in ("Verified", "Rejected"):
                raise CurationError(f"{path}:{lineno}: expected 'sample_id,Verified|Rejected'")
            reviews[row[0].strip()] = AuditStatus(row[1].strip())
    return reviews


def apply_reviews(samples: Sequence[CuratedSample], reviews: Mapping[str, AuditStatus]) -> list[CuratedSample]:
    known = {s.sample_id for s in samples}
    unknown = sorted(set(reviews) - known)
    if unknown:
        raise CurationError(f"reviews for unknown samples: {unknown}")
    out = []
    for s in samples:
        verdict = reviews.get(s.sample_id)
        if verdict is not None and s.audit_status is AuditStatus.NOT_SAMPLED:
            raise CurationError(f"{s.sample_id} was reviewed but never sampled for audit")
        out.append(dataclasses.replace(s, audit_status=verdict) if verdict else s)
    return out


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def _instruction(modality: ModalityKind) -> str:
    task = TASK_TEMPLATES[modality].split("\n\n")[0]
    return f"{ROLE_PROMPTS[modality]}\n{task}"


def export_training_set(samples: Sequence[CuratedSample], split: DatasetSplit) -> list[dict[str, str]]:
    """Instruction-tuning records for Passed, not-Rejected samples.

    Raises:
        SplitContaminationError: any sample's case is outside the train split.
        CurationError: a sample has not been through the contradiction filter.
    """
    unfiltered = [s.sample_id for s in samples if s.filter_status is None]
    if unfiltered:
        raise CurationError(f"samples not filtered: {unfiltered}")
    offending = sorted({s.case_id for s in samples if s.case_id not in split.train_ids})
    if offending:
        raise SplitContaminationError(offending)
    records = [
        {
            "instruction": _instruction(s.modality),
            "input": s.input_payload,
            "output": s.generated_summary,
            "case_id": s.case_id,
            "modality": s.modality.value,
        }
        for s in samples
        if s.filter_status is FilterStatus.PASSED and s.audit_status is not AuditStatus.REJECTED
    ]
    if not records:
        logger.warning("training export is empty")
    return records


def write_jsonl(path: str | Path, records: Iterable[Mapping[str, Any]]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")
            n += 1
    return n
