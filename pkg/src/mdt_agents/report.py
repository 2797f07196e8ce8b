"""Final MDT report structure and the tolerant section parser for core output."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any

from .errors import MalformedReport
from .rules import ConflictFlag

SECTION_KEYS = ("diagnosis", "evidence", "differential_diagnosis", "plan")
SECTION_TITLES = {
    "diagnosis": "Diagnosis",
    "evidence": "Evidence",
    "differential_diagnosis": "Differential Diagnosis",
    "plan": "Plan",
}
PLACEHOLDER = "NOT PROVIDED"

_HEADER_NAMES: dict[str, str] = {
    "diagnosis": "diagnosis",
    "final diagnosis": "diagnosis",
    "primary diagnosis": "diagnosis",
    "working diagnosis": "diagnosis",
    "impression": "diagnosis",
    "evidence": "evidence",
    "supporting evidence": "evidence",
    "key evidence": "evidence",
    "evidence summary": "evidence",
    "differential diagnosis": "differential_diagnosis",
    "differential diagnoses": "differential_diagnosis",
    "differentials": "differential_diagnosis",
    "differential": "differential_diagnosis",
    "plan": "plan",
    "treatment plan": "plan",
    "management plan": "plan",
    "recommended plan": "plan",
    "recommendations": "plan",
    "recommendation": "plan",
}

_NAMES_ALT = "|".join(
    r"\s+".join(map(re.escape, n.split())) for n in sorted(_HEADER_NAMES, key=len, reverse=True)
)
_EMPH = r"(?:\*\*|__|\*)?"
_HEADER_RE = re.compile(
    rf"""^[ \t]*(?:\#{{1,6}}[ \t]*)?{_EMPH}[ \t]*
    (?:(?:\d{{1,2}}|[IVX]{{1,4}})[.)][ \t]*)?{_EMPH}[ \t]*
    (?P<name>{_NAMES_ALT})[ \t]*{_EMPH}[ \t]*
    (?:(?P<colon>[:：])[ \t]*{_EMPH}[ \t]*(?P<rest>.*?))?[ \t]*$""",
    re.IGNORECASE | re.VERBOSE,
)


@dataclass(frozen=True)
class ParsedSections:
    sections: dict[str, str]
    warnings: tuple[str, ...] = ()


def parse_report_sections(text: str) -> ParsedSections:
    """Split core output on its four section headers.

    Headers are matched case-insensitively and may be numbered, bolded or
    markdown-headed; text may follow a colon on the header line. Missing or
    empty sections become ``NOT PROVIDED`` with a warning.

    Raises:
        MalformedReport: no header was recognized at all.
    """
    collected: dict[str, list[str]] = {}
    current: str | None = None
    for line in (text or "").splitlines():
        match = _HEADER_RE.match(line)
        if match:
            current = _HEADER_NAMES[" ".join(match.group("name").lower().split())]
            bucket = collected.setdefault(current, [])
            rest = (match.group("rest") or "").strip()
            if rest:
                bucket.append(rest)
            continue
        if current is not None:
            collected[current].append(line)
    if not collected:
        raise MalformedReport("no recognizable report section headers")

    sections: dict[str, str] = {}
    warnings: list[str] = []
    for key in SECTION_KEYS:
        body = "\n".join(collected.get(key, [])).strip()
        if not body:
            warnings.append(f"section '{SECTION_TITLES[key]}' missing or empty")
            body = PLACEHOLDER
        sections[key] = body
    return ParsedSections(sections, tuple(warnings))


@dataclass
class MdtReport:
    case_id: str
    sections: dict[str, str]
    flags: list[ConflictFlag] = field(default_factory=list)
    deferral: bool = False
    provenance: dict[str, list[str]] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)

    def to_dict(self, include_timings: bool = False) -> dict[str, Any]:
        out: dict[str, Any] = {
            "case_id": self.case_id,
            "sections": {k: self.sections[k] for k in SECTION_KEYS},
            "flags": [f.to_dict() for f in self.flags],
            "deferral": self.deferral,
            "provenance": self.provenance,
            "warnings": list(self.warnings),
        }
        if include_timings:
            out["timings"] = self.timings
        return out

    def to_json(self, include_timings: bool = False) -> str:
        """Canonical serialization; without timings it is reproducible byte for byte."""
        return json.dumps(self.to_dict(include_timings), indent=2, sort_keys=True, ensure_ascii=False)

    def render_text(self) -> str:
        parts = [f"{SECTION_TITLES[k]}:\n{self.sections[k]}" for k in SECTION_KEYS]
        if self.flags:
            parts.append("Flags:\n" + "\n".join(f"- {f.advisory}" for f in self.flags))
        return "\n\n".join(parts) + "\n"
