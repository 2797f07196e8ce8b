from .ablation import ablation_configs, export_sweep_table, run_ablation_sweep
from .judge import JudgeSummary, JudgeVerdict, Winner, parse_verdict, run_pairwise_judging
from .scoring import (
    DIMENSIONS,
    CompositeResult,
    ScoreCard,
    composite_from_means,
    composite_score,
    inter_rater_agreement,
    load_cards_csv,
)
from .synthetic import SCENARIOS, SyntheticCorpus, generate_synthetic_cases, scenario_counts

__all__ = [
    "DIMENSIONS",
    "SCENARIOS",
    "CompositeResult",
    "JudgeSummary",
    "JudgeVerdict",
    "ScoreCard",
    "SyntheticCorpus",
    "Winner",
    "ablation_configs",
    "composite_from_means",
    "composite_score",
    "export_sweep_table",
    "generate_synthetic_cases",
    "inter_rater_agreement",
    "load_cards_csv",
    "parse_verdict",
    "run_ablation_sweep",
    "run_pairwise_judging",
    "scenario_counts",
]
