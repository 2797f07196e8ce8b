"""Pairwise LLM-as-judge comparison of anonymized reports.

Presentation order is randomized per case with a seeded RNG and undone when
the verdict is recorded, so a judge's position bias cancels out in aggregate.
"""

from __future__ import annotations

import json
import random
import re
import string
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

from ..agents.backends import Backend, ChatRequest
from ..agents.runtime import call_backend
from ..evidence import AgentStatus

CRITERIA = ("reasoning coherence", "factual consistency", "evidence integration", "clinical utility")
JUDGE_SYSTEM_PROMPT = "You are an impartial senior oncologist comparing two anonymized MDT reports."


class Winner(str, Enum):
    A = "A"
    B = "B"
    TIE = "Tie"
    INVALID = "Invalid"


@dataclass(frozen=True)
class JudgeVerdict:
    case_id: str
    pair: tuple[str, str]
    winner: Winner
    swapped: bool
    criteria_notes: dict[str, str] = field(default_factory=dict)
    judge_backend: dict[str, Any] = field(default_factory=dict)
    raw_response: str = ""

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["winner"] = self.winner.value
        d["pair"] = list(self.pair)
        return d


@dataclass(frozen=True)
class JudgeSummary:
    wins_a: int
    wins_b: int
    ties: int
    invalid: int

    @property
    def valid(self) -> int:
        return self.wins_a + self.wins_b + self.ties

    @property
    def win_rate_a(self) -> float:
        return self.wins_a / self.valid if self.valid else 0.0

    @property
    def win_rate_b(self) -> float:
        return self.wins_b / self.valid if self.valid else 0.0


def default_rubric() -> str:
    return resources.files("mdt_agents.data").joinpath("judge_rubric.txt").read_text("utf-8")


def anonymize(text: str, identifiers: Sequence[str]) -> str:
    for ident in sorted((i for i in identifiers if i), key=len, reverse=True):
        text = re.sub(re.escape(ident), "[system]", text, flags=re.IGNORECASE)
    return text


def render_judge_prompt(rubric: str, first: str, second: str) -> str:
    return string.Template(rubric).safe_substitute(report_a=first, report_b=second)


_WINNER_WORDS = {"a": Winner.A, "b": Winner.B, "tie": Winner.TIE, "draw": Winner.TIE, "equal": Winner.TIE}


def parse_verdict(text: str) -> tuple[Winner, dict[str, str]]:
    """Read a verdict from a JSON object or a ``Winner: X`` line."""
    match = re.search(r"\{.*\}", text or "", re.DOTALL)
    if match:
        try:
            doc = json.loads(match.group(0))
        except ValueError:
            doc = None
        if isinstance(doc, dict) and isinstance(doc.get("winner"), str):
            winner = _WINNER_WORDS.get(doc["winner"].strip().lower())
            if winner is not None:
                notes = doc.get("criteria") or {}
                return winner, {str(k): str(v) for k, v in notes.items()} if isinstance(notes, dict) else {}
    line = re.search(r"winner\s*[:=]\s*\"?(A|B|tie|draw)\b", text or "", re.IGNORECASE)
    if line:
        return _WINNER_WORDS[line.group(1).lower()], {}
    return Winner.INVALID, {}


def run_pairwise_judging(
    case_ids: Sequence[str],
    source_a: Mapping[str, str],
    source_b: Mapping[str, str],
    judge: Backend,
    rubric: str | None = None,
    *,
    seed: int = 0,
    labels: tuple[str, str] = ("A", "B"),
    identifiers: Sequence[str] = (),
    transcript_dir: str | Path | None = None,
    max_workers: int = 4,
    timeout: float = 120.0,
    max_retries: int = 2,
) -> tuple[list[JudgeVerdict], JudgeSummary]:
    """Judge ``source_a[c]`` against ``source_b[c]`` for every case.

    Verdict winners refer to the sources (A = ``source_a``) after the random
    presentation order is undone. Unparseable or failed judgments count as
    invalid and are excluded from win rates.
    """
    missing = [c for c in case_ids if c not in source_a or c not in source_b]
    if missing:
        raise KeyError(f"reports missing for cases: {missing}")
    rubric = rubric if rubric is not None else default_rubric()
    rng = random.Random(seed)
    swaps = [rng.random() < 0.5 for _ in case_ids]
    scrub = list(identifiers) + [l for l in labels if len(l) > 1]

    def judge_one(i: int) -> JudgeVerdict:
        case_id = case_ids[i]
        a = anonymize(source_a[case_id], scrub)
        b = anonymize(source_b[case_id], scrub)
        first, second = (b, a) if swaps[i] else (a, b)
        request = ChatRequest(
            system=JUDGE_SYSTEM_PROMPT,
            user=render_judge_prompt(rubric, first, second),
            case_id=case_id,
            role="judge",
        )
        outcome = call_backend(judge, request, timeout=timeout, max_retries=max_retries, backoff=0.5)
        if outcome.status is AgentStatus.OK:
            presented, notes = parse_verdict(outcome.text)
        else:
            presented, notes = Winner.INVALID, {}
        winner = presented
        if swaps[i] and presented in (Winner.A, Winner.B):
            winner = Winner.B if presented is Winner.A else Winner.A
        return JudgeVerdict(
            case_id=case_id,
            pair=(f"{labels[0]}:{case_id}", f"{labels[1]}:{case_id}"),
            winner=winner,
            swapped=swaps[i],
            criteria_notes=notes,
            judge_backend=judge.describe(),
            raw_response=outcome.text or outcome.error,
        )

    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        verdicts = list(pool.map(judge_one, range(len(case_ids))))

    if transcript_dir is not None:
        out = Path(transcript_dir)
        out.mkdir(parents=True, exist_ok=True)
        for v in verdicts:
            (out / f"{v.case_id}.json").write_text(json.dumps(v.to_dict(), indent=2, sort_keys=True), encoding="utf-8")

    summary = JudgeSummary(
        wins_a=sum(v.winner is Winner.A for v in verdicts),
        wins_b=sum(v.winner is Winner.B for v in verdicts),
        ties=sum(v.winner is Winner.TIE for v in verdicts),
        invalid=sum(v.winner is Winner.INVALID for v in verdicts),
    )
    return verdicts, summary
