"""Synthetic multimodal cases with scripted agent transcripts.

Each case is built to realize one scenario, and the flags the pipeline should
raise under the demonstration rule table are recorded next to it.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Any, Sequence

from ..case import EndoscopyStudy, LabPanel, LabResult, PatientCase
from ..rules import FlagKind

SCENARIOS = ("concordant", "staging-conflict", "lab-contraindication", "missing-modality")

_SITES = (
    ("stomach", "gastric antrum"),
    ("stomach", "gastric body"),
    ("stomach", "gastric cardia"),
    ("colon", "sigmoid colon"),
    ("colon", "ascending colon"),
    ("rectum", "mid rectum"),
    ("esophagus", "distal esophagus"),
)
_COMPLAINTS = (
    "epigastric discomfort",
    "melena",
    "progressive dysphagia",
    "change in bowel habit",
    "iron-deficiency anemia",
    "unintentional weight loss",
    "hematochezia",
)
_HISTORY = (
    "Helicobacter pylori eradication",
    "appendectomy",
    "cholecystectomy",
    "no prior abdominal surgery",
    "colonic polypectomy",
)
_COMORBIDITIES = (
    "hypertension",
    "type 2 diabetes mellitus",
    "chronic kidney disease stage 2",
    "atrial fibrillation on anticoagulation",
    "none reported",
    "hyperlipidemia",
)
_MORPHOLOGY = ("polypoid", "ulcerative", "infiltrative", "flat elevated", "ulcerated polypoid")
_TEXTURE = (
    "irregular lobulated contour with a friable surface",
    "central ulceration with heaped-up margins",
    "granular surface with loss of normal folds",
    "firm nodular surface with whitish exudate",
)
_VASCULAR = (
    "irregular microvessels with loss of the normal capillary network",
    "dilated tortuous vessels at the margin",
    "avascular central area with peripheral neovascularization",
)
_BLEEDING = ("contact bleeding present", "no active bleeding", "oozing from the ulcer base")

# Endoscopy depth wording per T ordinal (kept to exactly one depth phrase per answer).
_ENDO_DEPTH = {
    0: ("intraepithelial",),
    1: ("mucosa", "submucosa"),
    2: ("muscularis propria",),
    3: ("subserosa",),
    4: ("serosa",),
}
_RAD_T = {0: "Tis", 1: "T1", 2: "T2", 3: "T3", 4: "T4"}

_CONCORDANT_PAIRS = [(e, r) for e in range(5) for r in range(1, 5) if abs(e - r) <= 1]
_CONFLICT_PAIRS = [(e, r) for e in range(5) for r in range(1, 5) if abs(e - r) > 1]

_LAB_NORMAL_RANGES = {
    "CEA": (0.0, 5.0, "ng/mL"),
    "CA19-9": (0.0, 37.0, "U/mL"),
    "ANC": (1.8, 7.5, "10^9/L"),
    "PLT": (125.0, 350.0, "10^9/L"),
    "HGB": (115.0, 150.0, "g/L"),
    "TBIL": (3.4, 20.5, "umol/L"),
}

# Contraindication variants: rule_id -> (analyte, low, high) for the offending value.
_CONTRA_VARIANTS = {
    "R-ANC-CHEMO": ("ANC", 0.3, 1.4),
    "R-PLT-CHEMO": ("PLT", 52.0, 70.0),
    "R-TBIL-CHEMO": ("TBIL", 60.0, 140.0),
}


@dataclass
class SyntheticCorpus:
    cases: list[PatientCase]
    transcripts: dict[str, dict[str, Any]]
    expected_flags: dict[str, list[str]]
    expected_rules: dict[str, list[str]]
    scenarios: dict[str, str]

    def case(self, case_id: str) -> PatientCase:
        for c in self.cases:
            if c.case_id == case_id:
                return c
        raise KeyError(case_id)


def scenario_counts(n: int, mix: Sequence[float]) -> tuple[int, ...]:
    """Largest-remainder apportionment of ``n`` cases over the scenario mix."""
    if len(mix) != len(SCENARIOS):
        raise ValueError(f"mix needs {len(SCENARIOS)} proportions")
    if any(p < 0 for p in mix) or abs(sum(mix) - 1.0) > 1e-9:
        raise ValueError("mix proportions must be non-negative and sum to 1")
    raw = [n * p for p in mix]
    counts = [math.floor(x + 1e-9) for x in raw]
    order = sorted(range(len(mix)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return tuple(counts)


def _fmt(x: float) -> str:
    return f"{x:g}"


def _lab_panel(rng: random.Random, offending: tuple[str, float] | None, marker_high: bool) -> LabPanel:
    results = []
    for analyte, (low, high, unit) in _LAB_NORMAL_RANGES.items():
        if offending and offending[0] == analyte:
            value = offending[1]
        elif analyte in ("CEA", "CA19-9") and marker_high:
            value = round(rng.uniform(high * 1.5, high * 8), 1)
        else:
            lo = low if low > 0 else high * 0.1
            value = round(rng.uniform(lo + (high - lo) * 0.15, high - (high - lo) * 0.15), 1)
        results.append(LabResult(analyte, value, unit, low, high))
    return LabPanel(tuple(results))


def _emr(rng: random.Random, age: int, sex: str, complaint: str) -> tuple[str, str]:
    weeks = rng.randint(2, 20)
    history = rng.choice(_HISTORY)
    comorb = rng.choice(_COMORBIDITIES)
    ecog = rng.randint(0, 2)
    emr = (
        f"{age}-year-old {sex} referred with {complaint} for {weeks} weeks. "
        f"Past history: {history}. Comorbidities: {comorb}. ECOG performance status {ecog}. "
        f"Family history non-contributory."
    )
    summary = (
        f"Demographics: {age}-year-old {sex}.\n"
        f"Chief complaint: {complaint}, {weeks}-week duration.\n"
        f"History: {history}.\n"
        f"Comorbidities: {comorb}; ECOG {ecog}."
    )
    return emr, summary


def _endoscopy_answer(rng: random.Random, location: str, t: int, size: float) -> str:
    depth = rng.choice(_ENDO_DEPTH[t])
    return (
        f"Q1. A {rng.choice(_MORPHOLOGY)} lesion is seen.\n"
        f"Q2. Estimated size about {size:g} cm.\n"
        f"Q3. Located in the {location}, involving roughly {rng.choice(('one third', 'half', 'two thirds'))} "
        f"of the circumference.\n"
        f"Q4. Invasion appears to extend to the {depth}.\n"
        f"Q5. {rng.choice(_TEXTURE).capitalize()}.\n"
        f"Q6. {rng.choice(_VASCULAR).capitalize()}.\n"
        f"Q7. {rng.choice(_BLEEDING).capitalize()}.\n"
        f"confidence: {rng.choice((0.6, 0.7, 0.8, 0.9))}"
    )


def _radiology(rng: random.Random, location: str, t: int) -> tuple[str, str]:
    n = rng.choice(("N0", "N1", "N2"))
    thickness = round(rng.uniform(0.8, 2.4), 1)
    nodes = {
        "N0": "No enlarged regional lymph nodes.",
        "N1": "Two enlarged perilesional lymph nodes, short axis up to 1.1 cm.",
        "N2": "Multiple enlarged regional lymph nodes, the largest 1.6 cm.",
    }[n]
    report = (
        f"Contrast-enhanced CT of the abdomen and pelvis. Focal wall thickening of the {location} "
        f"measuring {thickness} cm with heterogeneous enhancement. {nodes} "
        f"Liver, adrenals and peritoneum unremarkable."
    )
    answer = (
        f"Lesion: wall thickening of the {location}, maximal thickness {thickness} cm.\n"
        f"Lymph nodes: {nodes}\n"
        f"Systemic: no distant metastasis identified.\n"
        f"Staging estimate: c{_RAD_T[t]}{n}M0."
    )
    return report, answer


def _lab_answer(panel: LabPanel) -> str:
    parts = []
    for r in panel.results:
        parts.append(f"{r.analyte} {_fmt(r.value)} {r.unit} ({r.abnormal.value})")
    abnormal = [r.analyte for r in panel.results if r.abnormal.value in ("High", "Low")]
    note = (
        "Abnormal: " + ", ".join(abnormal) + "; correlate with imaging and clinical status."
        if abnormal
        else "No abnormal markers."
    )
    return "Values: " + "; ".join(parts) + ".\n" + note


def _core_report(organ: str, location: str, t_rad: int | None, plan: str) -> str:
    stage = f"clinical {_RAD_T[t_rad]}" if t_rad is not None else "stage to be determined"
    return (
        f"Diagnosis:\nSuspected adenocarcinoma of the {location} ({organ}), {stage}.\n\n"
        f"Evidence:\nSpecialist summaries were reviewed together; imaging, endoscopic appearance "
        f"and tumor markers are considered jointly.\n\n"
        f"Differential Diagnosis:\nLymphoma; gastrointestinal stromal tumor; inflammatory mass.\n\n"
        f"Plan:\n{plan}"
    )


def generate_synthetic_cases(
    n: int, seed: int, scenario_mix: Sequence[float] = (0.5, 0.25, 0.15, 0.1), prefix: str = "SYN"
) -> SyntheticCorpus:
    """Build ``n`` cases realizing the scenario mix, deterministically under ``seed``."""
    rng = random.Random(seed)
    counts = scenario_counts(n, scenario_mix)
    plan_scenarios = [s for s, k in zip(SCENARIOS, counts) for _ in range(k)]
    rng.shuffle(plan_scenarios)

    cases: list[PatientCase] = []
    transcripts: dict[str, dict[str, Any]] = {}
    expected: dict[str, list[str]] = {}
    expected_rules: dict[str, list[str]] = {}
    scenarios: dict[str, str] = {}

    for i, scenario in enumerate(plan_scenarios):
        case_id = f"{prefix}-{seed}-{i:04d}"
        organ, location = rng.choice(_SITES)
        age = rng.randint(38, 86)
        sex = rng.choice(("male", "female"))
        complaint = rng.choice(_COMPLAINTS)
        emr, emr_summary = _emr(rng, age, sex, complaint)

        pairs = _CONFLICT_PAIRS if scenario == "staging-conflict" else _CONCORDANT_PAIRS
        t_endo, t_rad = rng.choice(pairs)
        size = round(rng.uniform(0.8, 6.5), 1)

        offending = None
        rule_ids: list[str] = []
        if scenario == "lab-contraindication":
            rule_id = rng.choice(sorted(_CONTRA_VARIANTS))
            analyte, lo, hi = _CONTRA_VARIANTS[rule_id]
            offending = (analyte, round(rng.uniform(lo, hi), 1))
            rule_ids = [rule_id]
        panel = _lab_panel(rng, offending, marker_high=rng.random() < 0.5)

        n_frames = rng.randint(5, 10)
        endoscopy = EndoscopyStudy(
            tuple(f"endo://{case_id}/frame_{k:03d}.jpg" for k in range(1, n_frames + 1)), location
        )
        radiology_report, rad_answer = _radiology(rng, location, t_rad)

        dropped = None
        if scenario == "missing-modality":
            dropped = rng.choice(("endoscopy", "radiology"))
            if dropped == "endoscopy":
                endoscopy = None
            else:
                radiology_report = ""

        if scenario == "lab-contraindication" or rng.random() < 0.6:
            plan = "Neoadjuvant chemotherapy followed by radical resection; discuss at follow-up MDT."
        else:
            plan = "Radical resection with regional lymphadenectomy; adjuvant therapy per final pathology."
        if scenario == "lab-contraindication":
            final_plan = (
                "Withhold chemotherapy until the laboratory abnormality is corrected and rechecked; "
                "supportive care, then reassess for neoadjuvant chemotherapy."
            )
        else:
            final_plan = plan

        case = PatientCase(
            case_id=case_id,
            emr_text=emr,
            endoscopy=endoscopy,
            radiology_report=radiology_report,
            lab_panel=panel,
        )
        roles: dict[str, Any] = {
            "text": emr_summary,
            "laboratory": _lab_answer(panel),
            "core": _core_report(organ, location, None if dropped == "radiology" else t_rad, plan),
        }
        if final_plan != plan:
            roles["core.final"] = _core_report(organ, location, t_rad, final_plan)
        if endoscopy is not None:
            roles["endoscopy"] = _endoscopy_answer(rng, location, t_endo, size)
        if radiology_report:
            roles["radiology"] = rad_answer

        flags: list[str] = []
        if scenario == "staging-conflict":
            flags.append(FlagKind.STAGING_DISCREPANCY.value)
        elif scenario == "missing-modality":
            flags.append(FlagKind.INSUFFICIENT_STAGING_EVIDENCE.value)
        flags.extend(FlagKind.TREATMENT_CONTRAINDICATION.value for _ in rule_ids)

        cases.append(case)
        transcripts[case_id] = roles
        expected[case_id] = flags
        expected_rules[case_id] = rule_ids
        scenarios[case_id] = scenario

    return SyntheticCorpus(cases, transcripts, expected, expected_rules, scenarios)
