"""Seven-dimension expert score cards and composite scoring."""

from __future__ import annotations

import csv
import itertools
from collections import defaultdict
from dataclasses import dataclass
from decimal import Decimal
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from ..case import round_half_away
from ..errors import EvaluationError

DIMENSIONS: tuple[str, ...] = (
    "Medical Accuracy",
    "Diagnostic Comprehensiveness",
    "Reasoning Logic",
    "Differential Diagnosis Quality",
    "Therapy Feasibility & Compliance",
    "Structure & Clarity",
    "Professional Style",
)
DIMENSION_KEYS: dict[str, str] = {
    "Medical Accuracy": "medical_accuracy",
    "Diagnostic Comprehensiveness": "diagnostic_comprehensiveness",
    "Reasoning Logic": "reasoning_logic",
    "Differential Diagnosis Quality": "differential_diagnosis_quality",
    "Therapy Feasibility & Compliance": "therapy_feasibility_compliance",
    "Structure & Clarity": "structure_clarity",
    "Professional Style": "professional_style",
}
_BY_KEY = {v: k for k, v in DIMENSION_KEYS.items()}


@dataclass(frozen=True)
class ScoreCard:
    case_id: str
    rater_id: str
    dimensions: Mapping[str, int]
    comments: str = ""
    system: str = ""

    def __post_init__(self) -> None:
        if set(self.dimensions) != set(DIMENSIONS):
            missing = sorted(set(DIMENSIONS) - set(self.dimensions))
            extra = sorted(set(self.dimensions) - set(DIMENSIONS))
            raise EvaluationError(f"card {self.case_id}/{self.rater_id}: missing {missing}, unexpected {extra}")
        for name, score in self.dimensions.items():
            if isinstance(score, bool) or not isinstance(score, int) or not 1 <= score <= 5:
                raise EvaluationError(f"card {self.case_id}/{self.rater_id}: {name}={score!r} is not an integer 1-5")


@dataclass(frozen=True)
class CompositeResult:
    dimension_means: dict[str, Fraction]
    composite_exact: Fraction
    n_cards: int

    @property
    def composite(self) -> Decimal:
        """Composite rounded half away from zero to two decimals."""
        return _round2(self.composite_exact)

    def rounded_means(self) -> dict[str, Decimal]:
        return {k: _round2(v) for k, v in self.dimension_means.items()}


def _round2(x: Fraction) -> Decimal:
    return round_half_away(Decimal(x.numerator) / Decimal(x.denominator), 2)


def composite_from_means(means: Mapping[str, float | Fraction] | Sequence[float | Fraction]) -> CompositeResult:
    """Unweighted mean of the seven per-dimension means."""
    if isinstance(means, Mapping):
        if set(means) != set(DIMENSIONS):
            raise EvaluationError("dimension means must cover exactly the seven dimensions")
        values = [means[d] for d in DIMENSIONS]
    else:
        values = list(means)
        if len(values) != len(DIMENSIONS):
            raise EvaluationError(f"expected {len(DIMENSIONS)} dimension means, got {len(values)}")
    exact = [v if isinstance(v, Fraction) else Fraction(str(v)) for v in values]
    return CompositeResult(dict(zip(DIMENSIONS, exact)), sum(exact, Fraction(0)) / len(exact), 0)


def composite_score(cards: Sequence[ScoreCard]) -> CompositeResult:
    """Per-dimension means over ``cards`` and their unweighted composite."""
    if not cards:
        raise EvaluationError("no score cards")
    means = {d: Fraction(sum(c.dimensions[d] for c in cards), len(cards)) for d in DIMENSIONS}
    result = composite_from_means(means)
    return CompositeResult(result.dimension_means, result.composite_exact, len(cards))


# ---------------------------------------------------------------------------
# Agreement between raters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Agreement:
    rater_pair: tuple[str, str]
    n_items: int
    exact_agreement: float
    mean_abs_difference: float


def inter_rater_agreement(cards: Iterable[ScoreCard]) -> list[Agreement]:
    """Exact agreement and mean absolute difference for each pair of raters.

    Items are (system, case_id, dimension) triples scored by both raters.
    """
    scores: dict[str, dict[tuple[str, str, str], int]] = defaultdict(dict)
    for card in cards:
        for dim, value in card.dimensions.items():
            scores[card.rater_id][(card.system, card.case_id, dim)] = value
    out = []
    for a, b in itertools.combinations(sorted(scores), 2):
        shared = sorted(set(scores[a]) & set(scores[b]))
        if not shared:
            continue
        diffs = [abs(scores[a][k] - scores[b][k]) for k in shared]
        out.append(
            Agreement(
                (a, b),
                len(shared),
                sum(d == 0 for d in diffs) / len(diffs),
                sum(diffs) / len(diffs),
            )
        )
    return out


# ---------------------------------------------------------------------------
# Delimited files
# ---------------------------------------------------------------------------


def _column_dimension(column: str) -> str | None:
    column = column.strip()
    if column in DIMENSION_KEYS:
        return column
    return _BY_KEY.get(column.lower())


def load_cards_csv(path: str | Path) -> list[ScoreCard]:
    """One card per row: ``case_id, rater_id[, system], <7 dimension columns>[, comments]``.

    Dimension columns may use display names or snake_case keys.
    """
    cards = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise EvaluationError(f"{path}: empty file")
        dim_cols = {c: _column_dimension(c) for c in reader.fieldnames}
        found = {d for d in dim_cols.values() if d}
        if found != set(DIMENSIONS):
            raise EvaluationError(f"{path}: missing dimension columns {sorted(set(DIMENSIONS) - found)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                dims = {d: int(row[c]) for c, d in dim_cols.items() if d}
            except (TypeError, ValueError):
                raise EvaluationError(f"{path}:{lineno}: non-integer score") from None
            cards.append(
                ScoreCard(
                    case_id=row.get("case_id", ""),
                    rater_id=row.get("rater_id", ""),
                    dimensions=dims,
                    comments=row.get("comments") or "",
                    system=row.get("system") or "",
                )
            )
    return cards


def write_cards_csv(path: str | Path, cards: Iterable[ScoreCard]) -> None:
    fields = ["system", "case_id", "rater_id", *DIMENSION_KEYS.values(), "comments"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for c in cards:
            row = {"system": c.system, "case_id": c.case_id, "rater_id": c.rater_id, "comments": c.comments}
            row.update({DIMENSION_KEYS[d]: c.dimensions[d] for d in DIMENSIONS})
            writer.writerow(row)


def composite_by_system(cards: Sequence[ScoreCard]) -> dict[str, CompositeResult]:
    groups: dict[str, list[ScoreCard]] = defaultdict(list)
    for c in cards:
        groups[c.system].append(c)
    return {system: composite_score(group) for system, group in sorted(groups.items())}


def format_composite_table(results: Mapping[str, CompositeResult]) -> str:
    systems = list(results)
    width = max(len(d) for d in DIMENSIONS + ("Composite Score",))
    header = "Evaluation Dimension".ljust(width) + "".join(f"  {s or '(all)':>12}" for s in systems)
    lines = [header, "-" * len(header)]
    for d in DIMENSIONS:
        lines.append(d.ljust(width) + "".join(f"  {results[s].rounded_means()[d]:>12}" for s in systems))
    lines.append("-" * len(header))
    lines.append("Composite Score".ljust(width) + "".join(f"  {results[s].composite:>12}" for s in systems))
    lines.append("Cards".ljust(width) + "".join(f"  {results[s].n_cards:>12}" for s in systems))
    return "\n".join(lines)
