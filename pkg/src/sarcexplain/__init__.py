"""Prompting-strategy harness for explainable sarcasm detection across English varieties."""

from .agent import AgentTrace, kg_compatibility_check, parse_action_blob, run_agent
from .config import RunConfig, load_config
from .dataset_io import Dataset, Sample, Variety, dataset_stats, load_dataset, word_count
from .llm_client import EndpointConfig, GenerationConfig, LLMClient
from .metrics import (
    MetricRow,
    accuracy,
    aggregate,
    cosine_similarity,
    error_counts,
    judge_score,
    paired_permutation_test,
)
from .prompts import PromptBundle, Strategy, build_kg_system_prompt, build_prompt, few_shot_exemplars
from .report import RunReport, render_figures, render_report
from .runner import load_report, resume, run_experiment
from .verdicts import Label, Verdict, parse_verdict

__version__ = "0.1.0"

__all__ = [
    "AgentTrace",
    "Dataset",
    "EndpointConfig",
    "GenerationConfig",
    "LLMClient",
    "Label",
    "MetricRow",
    "PromptBundle",
    "RunConfig",
    "RunReport",
    "Sample",
    "Strategy",
    "Variety",
    "Verdict",
    "accuracy",
    "aggregate",
    "build_kg_system_prompt",
    "build_prompt",
    "cosine_similarity",
    "dataset_stats",
    "error_counts",
    "few_shot_exemplars",
    "judge_score",
    "kg_compatibility_check",
    "load_config",
    "load_dataset",
    "load_report",
    "paired_permutation_test",
    "parse_action_blob",
    "parse_verdict",
    "render_figures",
    "render_report",
    "resume",
    "run_agent",
    "run_experiment",
    "word_count",
]
