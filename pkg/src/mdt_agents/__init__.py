"""Hierarchical multi-agent orchestration for GI-oncology MDT report generation."""

from .case import (
    AbnormalFlag,
    AliasTable,
    DatasetSplit,
    EndoscopyStudy,
    LabPanel,
    LabResult,
    ModalityKind,
    PatientCase,
    canonicalize_analyte,
    case_from_dict,
    case_to_dict,
    flag_abnormal,
    split_dataset,
)
from .evidence import AgentStatus, EvidenceContainer, IntermediateState
from .orchestrator import PipelineConfig, build_context, dispatch_all, execute, run_pipeline
from .report import MdtReport, parse_report_sections
from .rules import ConflictFlag, FlagKind, LabRule, RuleTable, check_contraindications, detect_conflicts
from .staging import StagingClaim, TnmStage, map_invasion_depth, parse_tnm, staging_discrepancy

__version__ = "0.1.0"

__all__ = [
    "AbnormalFlag",
    "AgentStatus",
    "AliasTable",
    "ConflictFlag",
    "DatasetSplit",
    "EndoscopyStudy",
    "EvidenceContainer",
    "FlagKind",
    "IntermediateState",
    "LabPanel",
    "LabResult",
    "LabRule",
    "MdtReport",
    "ModalityKind",
    "PatientCase",
    "PipelineConfig",
    "RuleTable",
    "StagingClaim",
    "TnmStage",
    "build_context",
    "canonicalize_analyte",
    "case_from_dict",
    "case_to_dict",
    "check_contraindications",
    "detect_conflicts",
    "dispatch_all",
    "execute",
    "flag_abnormal",
    "map_invasion_depth",
    "parse_report_sections",
    "parse_tnm",
    "run_pipeline",
    "split_dataset",
    "staging_discrepancy",
]
