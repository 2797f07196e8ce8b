"""Multimodal patient case model and the raw-input helpers around it.

Everything here is immutable once built. Cases are parsed from and serialized
to plain dicts that follow ``data/case.schema.json``.
"""

from __future__ import annotations

import csv
import io
import math
import random
import re
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .errors import ConfigError, IngestionError

MAX_FRAMES = 121
SCHEMA_VERSION = "1.0"


class ModalityKind(str, Enum):
    TEXT = "text"
    ENDOSCOPY = "endoscopy"
    RADIOLOGY = "radiology"
    LABORATORY = "laboratory"

    @classmethod
    def ordered(cls) -> tuple["ModalityKind", ...]:
        return (cls.TEXT, cls.ENDOSCOPY, cls.RADIOLOGY, cls.LABORATORY)


class AbnormalFlag(str, Enum):
    LOW = "Low"
    NORMAL = "Normal"
    HIGH = "High"
    UNKNOWN = "Unknown"


# ---------------------------------------------------------------------------
# Analyte names
# ---------------------------------------------------------------------------

_WS = re.compile(r"\s+")


def _alias_key(name: str) -> str:
    return _WS.sub(" ", name.strip()).casefold()


class AliasTable:
    """Maps analyte spellings onto canonical names.

    The file format is two CSV columns per line, ``alias,canonical``; blank
    lines and lines starting with ``#`` are ignored.
    """

    def __init__(self, mapping: Mapping[str, str] | None = None) -> None:
        self._map = {_alias_key(k): v.strip() for k, v in (mapping or {}).items()}

    @classmethod
    def from_text(cls, text: str) -> "AliasTable":
        mapping: dict[str, str] = {}
        for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
            if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                continue
            if len(row) != 2 or not row[0].strip() or not row[1].strip():
                raise ConfigError(f"alias table line {lineno}: expected 'alias,canonical'")
            mapping[row[0]] = row[1]
        return cls(mapping)

    @classmethod
    def load(cls, path: str | Path) -> "AliasTable":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def default(cls) -> "AliasTable":
        text = resources.files("mdt_agents.data").joinpath("analyte_aliases.csv").read_text("utf-8")
        return cls.from_text(text)

    def lookup(self, name: str) -> str | None:
        return self._map.get(_alias_key(name))

    def items(self) -> Iterable[tuple[str, str]]:
        return self._map.items()


_DEFAULT_ALIASES: AliasTable | None = None


def default_aliases() -> AliasTable:
    global _DEFAULT_ALIASES
    if _DEFAULT_ALIASES is None:
        _DEFAULT_ALIASES = AliasTable.default()
    return _DEFAULT_ALIASES


def canonicalize_analyte(name: str, aliases: AliasTable | None = None) -> str:
    """Return the canonical analyte name for ``name``.

    Whitespace is trimmed and collapsed; the alias table is consulted
    case-insensitively and unknown names fall back to upper case.

    Raises:
        IngestionError: if nothing is left after trimming.
    """
    collapsed = _WS.sub(" ", (name or "").strip())
    if not collapsed:
        raise IngestionError("analyte name is empty")
    table = aliases if aliases is not None else default_aliases()
    return table.lookup(collapsed) or collapsed.upper()


# ---------------------------------------------------------------------------
# Lab data
# ---------------------------------------------------------------------------


def classify_value(
    value: float, ref_low: float | None = None, ref_high: float | None = None
) -> AbnormalFlag:
    """Classify a lab value against its reference range (bounds inclusive).

    A value outside a present bound is flagged even when the other bound is
    missing; Normal requires both bounds.
    """
    if ref_low is not None and value < ref_low:
        return AbnormalFlag.LOW
    if ref_high is not None and value > ref_high:
        return AbnormalFlag.HIGH
    if ref_low is None or ref_high is None:
        return AbnormalFlag.UNKNOWN
    return AbnormalFlag.NORMAL


@dataclass(frozen=True)
class LabResult:
    analyte: str
    value: float
    unit: str = ""
    ref_low: float | None = None
    ref_high: float | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.value, (int, float)) or not math.isfinite(self.value):
            raise IngestionError(f"{self.analyte}: value must be a finite number")
        if self.ref_low is not None and self.ref_high is not None and self.ref_low > self.ref_high:
            raise IngestionError(f"{self.analyte}: ref_low {self.ref_low} > ref_high {self.ref_high}")

    @property
    def abnormal(self) -> AbnormalFlag:
        return classify_value(self.value, self.ref_low, self.ref_high)

    def to_dict(self, with_flag: bool = False) -> dict[str, Any]:
        out: dict[str, Any] = {
            "analyte": self.analyte,
            "value": self.value,
            "unit": self.unit,
            "ref_low": self.ref_low,
            "ref_high": self.ref_high,
        }
        if with_flag:
            out["abnormal"] = self.abnormal.value
        return out


def flag_abnormal(result: LabResult) -> AbnormalFlag:
    return classify_value(result.value, result.ref_low, result.ref_high)


@dataclass(frozen=True)
class LabPanel:
    results: tuple[LabResult, ...] = ()
    drawn_at: str | None = None

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for r in self.results:
            key = _alias_key(r.analyte)
            if key in seen:
                raise IngestionError(f"duplicate analyte in panel: {r.analyte}")
            seen.add(key)

    def get(self, analyte: str) -> LabResult | None:
        key = _alias_key(analyte)
        for r in self.results:
            if _alias_key(r.analyte) == key:
                return r
        return None

    def __bool__(self) -> bool:
        return bool(self.results)


# ---------------------------------------------------------------------------
# Case
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EndoscopyStudy:
    frames: tuple[str, ...]
    site_hint: str | None = None

    def __post_init__(self) -> None:
        if not 1 <= len(self.frames) <= MAX_FRAMES:
            raise IngestionError(f"endoscopy study needs 1..{MAX_FRAMES} frames, got {len(self.frames)}")
        if any(not isinstance(f, str) or not f.strip() for f in self.frames):
            raise IngestionError("endoscopy frame references must be nonempty strings")


@dataclass(frozen=True)
class PatientCase:
    case_id: str
    emr_text: str = ""
    endoscopy: EndoscopyStudy | None = None
    radiology_report: str = ""
    lab_panel: LabPanel = field(default_factory=LabPanel)
    ground_truth_report: str | None = None

    def __post_init__(self) -> None:
        if not self.case_id or not self.case_id.strip():
            raise IngestionError("case_id must be nonempty")
        if not self.available_modalities():
            raise IngestionError(f"case {self.case_id}: every modality payload is empty")

    def has_payload(self, modality: ModalityKind) -> bool:
        if modality is ModalityKind.TEXT:
            return bool(self.emr_text.strip())
        if modality is ModalityKind.ENDOSCOPY:
            return self.endoscopy is not None
        if modality is ModalityKind.RADIOLOGY:
            return bool(self.radiology_report.strip())
        return bool(self.lab_panel)

    def available_modalities(self) -> tuple[ModalityKind, ...]:
        return tuple(m for m in ModalityKind.ordered() if self.has_payload(m))


def _opt_float(doc: Mapping[str, Any], key: str, where: str) -> float | None:
    value = doc.get(key)
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise IngestionError(f"{where}.{key}: expected a number")
    return float(value)


def _text(doc: Mapping[str, Any], key: str) -> str:
    value = doc.get(key)
    if value is None:
        return ""
    if not isinstance(value, str):
        raise IngestionError(f"{key}: expected a string")
    return value


def case_from_dict(doc: Mapping[str, Any], aliases: AliasTable | None = None) -> PatientCase:
    """Build a :class:`PatientCase` from a case document.

    Analyte names are canonicalized; an endoscopy block with no frames is
    treated as an absent study.
    """
    if not isinstance(doc, Mapping):
        raise IngestionError("case document must be an object")
    case_id = doc.get("case_id")
    if not isinstance(case_id, str):
        raise IngestionError("case_id: expected a string")

    endoscopy = None
    endo_doc = doc.get("endoscopy")
    if endo_doc is not None:
        if not isinstance(endo_doc, Mapping):
            raise IngestionError("endoscopy: expected an object")
        frames = endo_doc.get("frames") or []
        if not isinstance(frames, list):
            raise IngestionError("endoscopy.frames: expected a list")
        if frames:
            hint = endo_doc.get("site_hint")
            endoscopy = EndoscopyStudy(tuple(frames), hint.strip() if isinstance(hint, str) and hint.strip() else None)

    panel_doc = doc.get("lab_panel") or {}
    if not isinstance(panel_doc, Mapping):
        raise IngestionError("lab_panel: expected an object")
    results = []
    for i, row in enumerate(panel_doc.get("results") or []):
        where = f"lab_panel.results[{i}]"
        if not isinstance(row, Mapping):
            raise IngestionError(f"{where}: expected an object")
        analyte = row.get("analyte")
        if not isinstance(analyte, str):
            raise IngestionError(f"{where}.analyte: expected a string")
        value = _opt_float(row, "value", where)
        if value is None:
            raise IngestionError(f"{where}.value: required")
        unit = row.get("unit") or ""
        results.append(
            LabResult(
                analyte=canonicalize_analyte(analyte, aliases),
                value=value,
                unit=str(unit).strip(),
                ref_low=_opt_float(row, "ref_low", where),
                ref_high=_opt_float(row, "ref_high", where),
            )
        )
    drawn_at = panel_doc.get("drawn_at")

    gt = doc.get("ground_truth_report")
    return PatientCase(
        case_id=case_id.strip(),
        emr_text=_text(doc, "emr_text"),
        endoscopy=endoscopy,
        radiology_report=_text(doc, "radiology_report"),
        lab_panel=LabPanel(tuple(results), drawn_at if isinstance(drawn_at, str) else None),
        ground_truth_report=gt if isinstance(gt, str) else None,
    )


def case_to_dict(case: PatientCase) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "case_id": case.case_id,
        "emr_text": case.emr_text,
        "endoscopy": None
        if case.endoscopy is None
        else {"frames": list(case.endoscopy.frames), "site_hint": case.endoscopy.site_hint},
        "radiology_report": case.radiology_report,
        "lab_panel": {
            "results": [r.to_dict() for r in case.lab_panel.results],
            "drawn_at": case.lab_panel.drawn_at,
        },
    }
    if case.ground_truth_report is not None:
        doc["ground_truth_report"] = case.ground_truth_report
    return doc


def check_unique_ids(cases: Iterable[PatientCase]) -> None:
    seen: set[str] = set()
    for c in cases:
        if c.case_id in seen:
            raise IngestionError(f"duplicate case_id in dataset: {c.case_id}")
        seen.add(c.case_id)


# ---------------------------------------------------------------------------
# Dataset split
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetSplit:
    train_ids: frozenset[str]
    validation_ids: frozenset[str]
    test_ids: frozenset[str]

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train_ids), len(self.validation_ids), len(self.test_ids)

    def split_of(self, case_id: str) -> str | None:
        for name, ids in (("train", self.train_ids), ("validation", self.validation_ids), ("test", self.test_ids)):
            if case_id in ids:
                return name
        return None

    def to_dict(self) -> dict[str, list[str]]:
        return {
            "train": sorted(self.train_ids),
            "validation": sorted(self.validation_ids),
            "test": sorted(self.test_ids),
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Sequence[str]]) -> "DatasetSplit":
        return cls(frozenset(doc["train"]), frozenset(doc["validation"]), frozenset(doc["test"]))


def round_half_away(x: float | Decimal, places: int = 0) -> Decimal:
    quant = Decimal(1).scaleb(-places)
    d = x if isinstance(x, Decimal) else Decimal(str(x))
    # ROUND_HALF_UP in decimal rounds half away from zero.
    return d.quantize(quant, rounding=ROUND_HALF_UP)


def split_sizes(n: int, proportions: Sequence[float]) -> tuple[int, int, int]:
    """Validation and test take ``round(n * p)``; train takes the remainder."""
    if len(proportions) != 3:
        raise ConfigError("proportions must be (train, validation, test)")
    if any(not isinstance(p, (int, float)) or not p > 0 for p in proportions):
        raise ConfigError(f"proportions must all be positive: {tuple(proportions)}")
    if abs(sum(proportions) - 1.0) > 1e-9:
        raise ConfigError(f"proportions must sum to 1, got {sum(proportions)!r}")
    n_val = int(round_half_away(Decimal(n) * Decimal(str(proportions[1]))))
    n_test = int(round_half_away(Decimal(n) * Decimal(str(proportions[2]))))
    n_train = n - n_val - n_test
    if n_train < 0:
        raise ConfigError(f"{n} ids cannot honor proportions {tuple(proportions)}")
    return n_train, n_val, n_test


def split_dataset(case_ids: Sequence[str], proportions: Sequence[float], seed: int) -> DatasetSplit:
    """Shuffle ``case_ids`` with ``seed`` and partition them.

    The shuffled list is cut into validation, test, then train.
    """
    if not case_ids:
        raise ConfigError("cannot split an empty id list")
    ids = list(case_ids)
    if len(set(ids)) != len(ids):
        raise ConfigError("case ids must be unique")
    n_train, n_val, n_test = split_sizes(len(ids), proportions)
    random.Random(seed).shuffle(ids)
    return DatasetSplit(
        train_ids=frozenset(ids[n_val + n_test :]),
        validation_ids=frozenset(ids[:n_val]),
        test_ids=frozenset(ids[n_val : n_val + n_test]),
    )
