"""TNM staging claim extraction and ordinal comparison."""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Sequence

from .case import ModalityKind
from .errors import ConfigError, IncomparableStages

DISCREPANCY_THRESHOLD = 1

T_CATEGORIES = ("TX", "T0", "Tis", "T1", "T2", "T3", "T4")
N_CATEGORIES = ("NX", "N0", "N1", "N2", "N3")
M_CATEGORIES = ("MX", "M0", "M1")

_T_ORDINAL: dict[str, int | None] = {
    "TX": None,
    "T0": 0,
    "Tis": 0,
    "T1": 1,
    "T2": 2,
    "T3": 3,
    "T4": 4,
}


def t_ordinal(t: str) -> int | None:
    """Progression-order value of a T category; ``None`` for TX."""
    try:
        return _T_ORDINAL[t]
    except KeyError:
        raise ValueError(f"unknown T category: {t!r}") from None


class ExtractionRoute(str, Enum):
    EXPLICIT_TNM = "ExplicitTnm"
    INVASION_DEPTH_MAPPED = "InvasionDepthMapped"


@dataclass(frozen=True)
class TnmStage:
    t: str
    n: str | None = None
    m: str | None = None
    substage_suffix: str | None = None

    def __post_init__(self) -> None:
        if self.t not in _T_ORDINAL:
            raise ValueError(f"unknown T category: {self.t!r}")
        if self.n is not None and self.n not in N_CATEGORIES:
            raise ValueError(f"unknown N category: {self.n!r}")
        if self.m is not None and self.m not in M_CATEGORIES:
            raise ValueError(f"unknown M category: {self.m!r}")
        if self.substage_suffix is not None and self.substage_suffix not in ("a", "b", "c"):
            raise ValueError(f"unknown substage suffix: {self.substage_suffix!r}")

    @property
    def ordinal(self) -> int | None:
        return _T_ORDINAL[self.t]

    @property
    def comparable(self) -> bool:
        return self.ordinal is not None

    def label(self) -> str:
        return f"{self.t}{self.substage_suffix or ''}{self.n or ''}{self.m or ''}"

    def to_dict(self) -> dict[str, Any]:
        return {"t": self.t, "n": self.n, "m": self.m, "substage_suffix": self.substage_suffix}


@dataclass(frozen=True)
class StagingClaim:
    stage: TnmStage
    source: ModalityKind
    evidence_span: str
    extraction_route: ExtractionRoute
    start: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "stage": self.stage.to_dict(),
            "source": self.source.value,
            "evidence_span": self.evidence_span,
            "extraction_route": self.extraction_route.value,
            "start": self.start,
        }


# ---------------------------------------------------------------------------
# Explicit TNM notation
# ---------------------------------------------------------------------------

_TNM_RE = re.compile(
    r"""
    (?<![A-Za-z0-9])
    (?:yp|yc|[cpru])?
    T(?P<t>is|[0-4]|(?-i:X))(?P<tsub>[abc])?
    (?![-\s]*weighted)
    (?:[\s,/]*(?:[cp])?N(?P<n>[0-3]|x)[abc]?)?
    (?:[\s,/]*(?:[cp])?M(?P<m>[01]|x)[abc]?)?
    (?![A-Za-z0-9])
    """,
    re.IGNORECASE | re.VERBOSE,
)


def _t_label(raw: str) -> str:
    raw = raw.lower()
    if raw == "is":
        return "Tis"
    if raw == "x":
        return "TX"
    return "T" + raw


def parse_tnm(text: str, source: ModalityKind = ModalityKind.RADIOLOGY) -> list[StagingClaim]:
    """Extract explicit TNM notations (``T3N1M0``, ``T3 N1 M0``, ``cT1a`` ...).

    Each match yields one claim whose span is the matched substring.
    """
    claims = []
    for match in _TNM_RE.finditer(text or ""):
        n = match.group("n")
        m = match.group("m")
        tsub = match.group("tsub")
        t = _t_label(match.group("t"))
        stage = TnmStage(
            t=t,
            n=None if n is None else "N" + n.upper(),
            m=None if m is None else "M" + m.upper(),
            substage_suffix=tsub.lower() if tsub and t not in ("TX", "Tis", "T0") else None,
        )
        # Trailing separators are not part of the notation.
        span = match.group(0).rstrip(" \t\n,/")
        claims.append(StagingClaim(stage, source, span, ExtractionRoute.EXPLICIT_TNM, match.start()))
    return claims


# ---------------------------------------------------------------------------
# Invasion depth phrases
# ---------------------------------------------------------------------------


class DepthTable:
    """Phrase-to-T-stage mapping for invasion-depth language.

    File format: CSV ``phrase,stage`` where stage is e.g. ``T2`` or ``T1b``.
    Longer phrases win when several overlap at the same position.
    """

    def __init__(self, entries: Iterable[tuple[str, str]]) -> None:
        parsed: list[tuple[str, TnmStage]] = []
        for phrase, stage in entries:
            phrase = " ".join(phrase.split()).lower()
            if not phrase:
                raise ConfigError("empty phrase in invasion-depth table")
            parsed.append((phrase, _parse_stage_label(stage)))
        if not parsed:
            raise ConfigError("invasion-depth table is empty")
        parsed.sort(key=lambda e: (-len(e[0]), e[0]))
        self.entries = tuple(parsed)
        self._by_phrase = dict(parsed)
        alternation = "|".join(r"\s+".join(map(re.escape, p.split())) for p, _ in parsed)
        self._regex = re.compile(rf"(?<![A-Za-z0-9])(?:{alternation})(?![A-Za-z0-9])", re.IGNORECASE)

    @classmethod
    def from_text(cls, text: str) -> "DepthTable":
        rows = []
        for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
            if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                continue
            if [c.strip().lower() for c in row] == ["phrase", "stage"]:
                continue
            if len(row) != 2:
                raise ConfigError(f"invasion-depth table line {lineno}: expected 'phrase,stage'")
            rows.append((row[0], row[1].strip()))
        return cls(rows)

    @classmethod
    def load(cls, path: str | Path) -> "DepthTable":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def default(cls) -> "DepthTable":
        return cls.from_text(resources.files("mdt_agents.data").joinpath("invasion_depth.csv").read_text("utf-8"))

    def stage_for(self, matched: str) -> TnmStage:
        return self._by_phrase[" ".join(matched.split()).lower()]

    def finditer(self, text: str):
        return self._regex.finditer(text)


def _parse_stage_label(label: str) -> TnmStage:
    m = re.fullmatch(r"T(is|X|[0-4])([abc])?", label.strip(), re.IGNORECASE)
    if not m:
        raise ConfigError(f"bad T stage label in invasion-depth table: {label!r}")
    t = _t_label(m.group(1))
    return TnmStage(t=t, substage_suffix=m.group(2).lower() if m.group(2) else None)


_DEFAULT_DEPTH: DepthTable | None = None


def default_depth_table() -> DepthTable:
    global _DEFAULT_DEPTH
    if _DEFAULT_DEPTH is None:
        _DEFAULT_DEPTH = DepthTable.default()
    return _DEFAULT_DEPTH


def map_invasion_depth(
    text: str, source: ModalityKind = ModalityKind.ENDOSCOPY, table: DepthTable | None = None
) -> list[StagingClaim]:
    table = table or default_depth_table()
    claims = []
    for match in table.finditer(text or ""):
        claims.append(
            StagingClaim(
                stage=table.stage_for(match.group(0)),
                source=source,
                evidence_span=match.group(0),
                extraction_route=ExtractionRoute.INVASION_DEPTH_MAPPED,
                start=match.start(),
            )
        )
    return claims


def extract_claims(text: str, source: ModalityKind, table: DepthTable | None = None) -> list[StagingClaim]:
    """Both extraction routes, ordered by position in ``text``."""
    claims = parse_tnm(text, source) + map_invasion_depth(text, source, table)
    return sorted(claims, key=lambda c: (c.start, c.extraction_route.value))


def representative_claim(claims: Sequence[StagingClaim]) -> StagingClaim | None:
    """Deepest comparable claim; ties go to the earliest in the list."""
    best: StagingClaim | None = None
    for claim in claims:
        ordinal = claim.stage.ordinal
        if ordinal is None:
            continue
        if best is None or ordinal > best.stage.ordinal:  # type: ignore[operator]
            best = claim
    return best


# ---------------------------------------------------------------------------
# Comparison
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StagingDiscrepancy:
    claim_a: StagingClaim
    claim_b: StagingClaim
    distance: int


def staging_distance(a: TnmStage, b: TnmStage) -> int:
    oa, ob = a.ordinal, b.ordinal
    if oa is None or ob is None:
        raise IncomparableStages(f"cannot compare {a.t} with {b.t}")
    return abs(oa - ob)


def staging_discrepancy(claim_a: StagingClaim, claim_b: StagingClaim) -> StagingDiscrepancy | None:
    """Return a discrepancy iff the T categories differ by more than one level.

    Raises:
        IncomparableStages: if either side is TX.
    """
    distance = staging_distance(claim_a.stage, claim_b.stage)
    if distance > DISCREPANCY_THRESHOLD:
        return StagingDiscrepancy(claim_a, claim_b, distance)
    return None
