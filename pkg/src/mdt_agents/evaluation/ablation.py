"""Ablation sweep over the six standard pipeline configurations."""

from __future__ import annotations

import csv
import dataclasses
from pathlib import Path
from typing import Sequence

from ..case import ModalityKind, PatientCase
from ..errors import PipelineError
from ..orchestrator import PipelineConfig, run_many
from ..report import MdtReport
from ..rules import RuleTable

FULL = "Full Model"
NO_CONFLICT_DETECTION = "w/o Conflict Detection"
WITHOUT_AGENT = {
    ModalityKind.ENDOSCOPY: "w/o Endoscopy Agent",
    ModalityKind.RADIOLOGY: "w/o Radiology Agent",
    ModalityKind.LABORATORY: "w/o Laboratory Agent",
    ModalityKind.TEXT: "w/o Text Agent (EMR)",
}

SweepResult = dict[str, dict[str, MdtReport | PipelineError]]


def ablation_configs(base: PipelineConfig) -> dict[str, PipelineConfig]:
    configs = {FULL: dataclasses.replace(base, name=FULL)}
    for modality, name in WITHOUT_AGENT.items():
        configs[name] = dataclasses.replace(base.without(modality), name=name)
    configs[NO_CONFLICT_DETECTION] = dataclasses.replace(base.without_conflict_detection(), name=NO_CONFLICT_DETECTION)
    return configs


def run_ablation_sweep(
    cases: Sequence[PatientCase], base_config: PipelineConfig, rules: RuleTable, max_workers: int = 4
) -> SweepResult:
    """Run every case under each configuration; per-case errors are kept, not raised."""
    return {
        name: run_many(cases, config, rules, max_workers=max_workers)
        for name, config in ablation_configs(base_config).items()
    }


def export_sweep_table(result: SweepResult, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["configuration", "case_id", "status", "flags", "deferral", "provenance", "error"])
        for name, reports in result.items():
            for case_id, r in reports.items():
                if isinstance(r, PipelineError):
                    writer.writerow([name, case_id, "failed", "", "", "", str(r)])
                else:
                    writer.writerow(
                        [
                            name,
                            case_id,
                            "done",
                            ";".join(f.kind.value for f in r.flags),
                            str(r.deferral).lower(),
                            ";".join(r.provenance.get("diagnosis", [])),
                            "",
                        ]
                    )
