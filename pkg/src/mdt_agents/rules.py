"""Conflict detection: staging comparison plus lab-threshold contraindication rules."""

from __future__ import annotations

import csv
import io
import logging
import operator
import re
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from .case import LabPanel, LabResult, ModalityKind, canonicalize_analyte
from .errors import ConfigError
from .evidence import EvidenceContainer
from .staging import StagingClaim, representative_claim, staging_discrepancy

logger = logging.getLogger(__name__)

STAGING_ADVISORY = "Staging Discrepancy Detected"
INSUFFICIENT_ADVISORY = "Insufficient Staging Evidence"
CONTRAINDICATION_ADVISORY = "Treatment Contraindication"

RULE_FIELDS = ("rule_id", "treatment_keyword", "analyte", "comparator", "threshold", "unit", "message")


class Comparator(str, Enum):
    LT = "LT"
    LE = "LE"
    GT = "GT"
    GE = "GE"

    @property
    def symbol(self) -> str:
        return {"LT": "<", "LE": "<=", "GT": ">", "GE": ">="}[self.value]

    @property
    def fn(self) -> Callable[[float, float], bool]:
        return {"LT": operator.lt, "LE": operator.le, "GT": operator.gt, "GE": operator.ge}[self.value]


class FlagKind(str, Enum):
    STAGING_DISCREPANCY = "StagingDiscrepancy"
    TREATMENT_CONTRAINDICATION = "TreatmentContraindication"
    INSUFFICIENT_STAGING_EVIDENCE = "InsufficientStagingEvidence"


def normalize_unit(unit: str) -> str:
    u = unit.casefold().replace(" ", "").replace("×", "x").replace("*", "x").replace("µ", "u")
    if u.startswith("x10"):
        u = u[1:]
    return u


@dataclass(frozen=True)
class LabRule:
    rule_id: str
    treatment_keyword: str
    analyte: str
    comparator: Comparator
    threshold: float
    unit: str
    message: str

    def __post_init__(self) -> None:
        if not self.rule_id.strip():
            raise ConfigError("rule_id must be nonempty")
        if not self.treatment_keyword.strip():
            raise ConfigError(f"rule {self.rule_id}: treatment_keyword must be nonempty")

    @property
    def keyword_pattern(self) -> re.Pattern[str]:
        words = self.treatment_keyword.split()
        body = r"\s+".join(map(re.escape, words))
        return re.compile(rf"(?<![A-Za-z0-9]){body}", re.IGNORECASE)

    def to_dict(self) -> dict[str, Any]:
        return {
            "rule_id": self.rule_id,
            "treatment_keyword": self.treatment_keyword,
            "analyte": self.analyte,
            "comparator": self.comparator.value,
            "threshold": self.threshold,
            "unit": self.unit,
            "message": self.message,
        }


class RuleTable:
    """Validated, immutable collection of :class:`LabRule`.

    The file format is CSV with the header
    ``rule_id,treatment_keyword,analyte,comparator,threshold,unit,message``.
    """

    def __init__(self, rules: Iterable[LabRule] = ()) -> None:
        rules = tuple(rules)
        seen: set[str] = set()
        for rule in rules:
            if rule.rule_id in seen:
                raise ConfigError(f"duplicate rule_id: {rule.rule_id}")
            seen.add(rule.rule_id)
        self.rules: tuple[LabRule, ...] = tuple(sorted(rules, key=lambda r: r.rule_id))

    def __iter__(self):
        return iter(self.rules)

    def __len__(self) -> int:
        return len(self.rules)

    def with_rule(self, rule: LabRule) -> "RuleTable":
        return RuleTable(self.rules + (rule,))

    def to_rows(self) -> list[dict[str, Any]]:
        return [r.to_dict() for r in self.rules]

    @classmethod
    def from_text(cls, text: str) -> "RuleTable":
        lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
        reader = csv.DictReader(io.StringIO("\n".join(lines)))
        if reader.fieldnames is None or tuple(f.strip() for f in reader.fieldnames) != RULE_FIELDS:
            raise ConfigError(f"rule table header must be: {','.join(RULE_FIELDS)}")
        rules = []
        for lineno, row in enumerate(reader, start=2):
            row = {k.strip(): (v or "").strip() for k, v in row.items() if k is not None}
            try:
                comparator = Comparator(row["comparator"].upper())
            except ValueError:
                raise ConfigError(f"rule line {lineno}: unknown comparator {row['comparator']!r}") from None
            try:
                threshold = float(row["threshold"])
            except ValueError:
                raise ConfigError(f"rule line {lineno}: threshold is not a number") from None
            rules.append(
                LabRule(
                    rule_id=row["rule_id"],
                    treatment_keyword=row["treatment_keyword"],
                    analyte=canonicalize_analyte(row["analyte"]),
                    comparator=comparator,
                    threshold=threshold,
                    unit=row["unit"],
                    message=row["message"],
                )
            )
        return cls(rules)

    @classmethod
    def load(cls, path: str | Path) -> "RuleTable":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def demo(cls) -> "RuleTable":
        """Demonstration thresholds shipped with the package. Not clinical guidance."""
        return cls.from_text(resources.files("mdt_agents.data").joinpath("demo_rules.csv").read_text("utf-8"))


@dataclass(frozen=True)
class ConflictFlag:
    kind: FlagKind
    advisory: str
    detail: dict[str, Any] = field(default_factory=dict, hash=False, compare=True)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind.value, "advisory": self.advisory, "detail": self.detail}


# ---------------------------------------------------------------------------
# Contraindications
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return f"{x:g}"


def check_contraindications(plan_text: str, panel: LabPanel, rules: RuleTable) -> list[ConflictFlag]:
    """Flag every rule whose treatment is proposed and whose lab threshold is crossed."""
    flags = []
    for rule in rules:
        if not plan_text or not rule.keyword_pattern.search(plan_text):
            continue
        result = panel.get(rule.analyte)
        if result is None:
            logger.info("rule %s not applicable: %s absent from panel", rule.rule_id, rule.analyte)
            continue
        if normalize_unit(result.unit) != normalize_unit(rule.unit):
            logger.warning(
                "rule %s skipped: unit mismatch for %s (%r vs rule %r)",
                rule.rule_id,
                rule.analyte,
                result.unit,
                rule.unit,
            )
            continue
        if rule.comparator.fn(result.value, rule.threshold):
            flags.append(_contraindication_flag(rule, result))
    return flags


def _contraindication_flag(rule: LabRule, result: LabResult) -> ConflictFlag:
    advisory = (
        f"{CONTRAINDICATION_ADVISORY} [{rule.rule_id}]: {rule.message} "
        f"({result.analyte} {_fmt(result.value)} {result.unit} {rule.comparator.symbol} "
        f"{_fmt(rule.threshold)} {rule.unit}; proposed: {rule.treatment_keyword})"
    )
    return ConflictFlag(
        FlagKind.TREATMENT_CONTRAINDICATION,
        advisory,
        {"rule": rule.to_dict(), "result": result.to_dict(with_flag=True)},
    )


# ---------------------------------------------------------------------------
# Staging
# ---------------------------------------------------------------------------


def discrepancy_flag(endo: StagingClaim, rad: StagingClaim) -> ConflictFlag | None:
    record = staging_discrepancy(endo, rad)
    if record is None:
        return None
    advisory = (
        f"{STAGING_ADVISORY}: {endo.source.value} {endo.stage.t} "
        f"(\"{endo.evidence_span}\") vs {rad.source.value} {rad.stage.t} "
        f"(\"{rad.evidence_span}\"), distance {record.distance}. "
        "Recommend pathological confirmation before committing to a stage."
    )
    return ConflictFlag(
        FlagKind.STAGING_DISCREPANCY,
        advisory,
        {"claims": [endo.to_dict(), rad.to_dict()], "distance": record.distance},
    )


def staging_flags(
    evidence: EvidenceContainer,
    left: ModalityKind = ModalityKind.ENDOSCOPY,
    right: ModalityKind = ModalityKind.RADIOLOGY,
) -> list[ConflictFlag]:
    """Compare the representative T claims of two modalities."""
    reps: dict[ModalityKind, StagingClaim | None] = {}
    for modality in (left, right):
        state = evidence.ok_state(modality)
        reps[modality] = representative_claim(state.claims) if state is not None else None

    missing = [m.value for m in (left, right) if reps[m] is None]
    if missing:
        advisory = f"{INSUFFICIENT_ADVISORY}: no comparable T stage from {' and '.join(missing)}."
        present = {m.value: reps[m].to_dict() for m in (left, right) if reps[m] is not None}  # type: ignore[union-attr]
        return [ConflictFlag(FlagKind.INSUFFICIENT_STAGING_EVIDENCE, advisory, {"missing": missing, "present": present})]

    flag = discrepancy_flag(reps[left], reps[right])  # type: ignore[arg-type]
    return [flag] if flag is not None else []


def lab_panel_from(evidence: EvidenceContainer) -> LabPanel | None:
    state = evidence.ok_state(ModalityKind.LABORATORY)
    return state.lab_panel if state is not None else None


def detect_conflicts(
    evidence: EvidenceContainer, draft_plan: str | None, rules: RuleTable
) -> list[ConflictFlag]:
    """All cross-modal flags for a synchronized evidence container.

    Staging flags come first, then contraindications ordered by rule_id.
    Contraindications need both a draft plan and an Ok laboratory state.
    """
    if not evidence.synchronized:
        raise ValueError("evidence container is not synchronized")
    flags = staging_flags(evidence)
    panel = lab_panel_from(evidence)
    if draft_plan and panel is not None:
        flags.extend(check_contraindications(draft_plan, panel, rules))
    return flags


def merge_flags(existing: Sequence[ConflictFlag], new: Sequence[ConflictFlag]) -> list[ConflictFlag]:
    out = list(existing)
    for flag in new:
        if flag not in out:
            out.append(flag)
    return out
