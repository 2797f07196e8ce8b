"""Prompt templates for the specialist and core agents."""

from __future__ import annotations

from dataclasses import dataclass

from ..case import LabPanel, ModalityKind, PatientCase

ROLE_PROMPTS: dict[ModalityKind, str] = {
    ModalityKind.TEXT: (
        "You are the Text Agent of a gastrointestinal oncology multidisciplinary team. "
        "You read electronic medical records and produce concise, structured problem summaries."
    ),
    ModalityKind.ENDOSCOPY: (
        "You are the Endoscopy Agent of a gastrointestinal oncology multidisciplinary team. "
        "You interpret endoscopic image sequences and answer clinically framed questions about them."
    ),
    ModalityKind.RADIOLOGY: (
        "You are the Radiology Agent of a gastrointestinal oncology multidisciplinary team. "
        "You read CT and MRI reports and estimate TNM staging with supporting evidence."
    ),
    ModalityKind.LABORATORY: (
        "You are the Laboratory Agent of a gastrointestinal oncology multidisciplinary team. "
        "You interpret biochemical and serological results such as CEA and CA19-9."
    ),
}

TASK_TEMPLATES: dict[ModalityKind, str] = {
    ModalityKind.TEXT: (
        "Extract key information to produce a structured summary of demographics, "
        "chief complaints, history, and comorbidities.\n\n"
        "EMR narrative:\n{emr_text}"
    ),
    ModalityKind.ENDOSCOPY: (
        "You are given {n_frames} endoscopic frames{site_clause}. Answer every question below, "
        "in order, using only what the frames show. Give lesion morphology, size and location, "
        "and name the deepest layer you believe is invaded.\n\n"
        "{questions}\n\n"
        "Frames:\n{frame_list}"
    ),
    ModalityKind.RADIOLOGY: (
        "Extract structured observations of lesion features (e.g., wall thickening), "
        "lymph node status, and other systemic findings. Give T, N and M estimates in TNM "
        "notation together with the report text that supports each.\n\n"
        "Radiology report:\n{radiology_report}"
    ),
    ModalityKind.LABORATORY: (
        "Report abnormal markers with specific values and provide a preliminary analysis "
        "of their clinical significance.\n\n"
        "Laboratory panel:\n{lab_table}"
    ),
}

CORE_SYSTEM_PROMPT = (
    "You are the MDT-Core agent, chairing a gastrointestinal oncology multidisciplinary team. "
    "You integrate specialist findings into one final report."
)

CORE_TASK_TEMPLATE = (
    "Integrate the specialist findings below into a final MDT report with exactly four "
    "sections, each introduced by its header on its own line:\n"
    "Diagnosis:\nEvidence:\nDifferential Diagnosis:\nPlan:\n\n"
    "Address every advisory listed after the findings. If staging evidence conflicts, "
    "recommend pathological confirmation instead of choosing a stage.\n\n"
    "{context}"
)

DEFAULT_VQA_QUESTIONS: tuple[str, ...] = (
    "What type of lesion is visible{site_clause} (e.g. polypoid, ulcerative, infiltrative, flat)?",
    "What is the estimated size of the lesion?",
    "Where exactly is the lesion located, and how much of the circumference does it involve?",
    "What is the likely depth of invasion into the wall?",
    "Describe the shape and surface texture of the lesion.",
    "Describe the mucosal and vascular pattern around and on the lesion.",
    "Are there signs of bleeding, friability or ulceration?",
)


@dataclass(frozen=True)
class VqaBattery:
    questions: tuple[str, ...] = DEFAULT_VQA_QUESTIONS

    def __post_init__(self) -> None:
        if not self.questions:
            raise ValueError("VQA battery needs at least one question")

    def render(self, site_hint: str | None) -> list[str]:
        clause = f" at the {site_hint}" if site_hint else ""
        rendered = [q.format(site_clause=clause).strip() for q in self.questions]
        if any(not q for q in rendered):
            raise ValueError("VQA question rendered empty")
        return rendered


def _num(x: float | None) -> str:
    return "" if x is None else f"{x:g}"


def render_lab_table(panel: LabPanel) -> str:
    lines = ["| analyte | value | unit | reference | flag |", "|---|---|---|---|---|"]
    for r in panel.results:
        ref = f"{_num(r.ref_low)}-{_num(r.ref_high)}" if r.ref_low is not None or r.ref_high is not None else ""
        lines.append(f"| {r.analyte} | {_num(r.value)} | {r.unit} | {ref} | {r.abnormal.value} |")
    return "\n".join(lines)


def task_fields(modality: ModalityKind, case: PatientCase, battery: VqaBattery) -> dict[str, object]:
    if modality is ModalityKind.TEXT:
        return {"emr_text": case.emr_text}
    if modality is ModalityKind.RADIOLOGY:
        return {"radiology_report": case.radiology_report}
    if modality is ModalityKind.LABORATORY:
        return {"lab_table": render_lab_table(case.lab_panel)}
    study = case.endoscopy
    assert study is not None
    questions = battery.render(study.site_hint)
    return {
        "n_frames": len(study.frames),
        "site_clause": f" of the {study.site_hint}" if study.site_hint else "",
        "questions": "\n".join(f"Q{i}. {q}" for i, q in enumerate(questions, start=1)),
        "frame_list": "\n".join(f"[{i}] {ref}" for i, ref in enumerate(study.frames, start=1)),
    }
