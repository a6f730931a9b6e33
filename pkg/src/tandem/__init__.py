"""Mentor/intern LLM cascade driven by the intern's token-level uncertainty."""

from .cascade import (
    CascadeConfig,
    CostReport,
    EpisodeResult,
    Policy,
    StageRecord,
    collect_all_stages,
    compute_cost,
    compute_dollar_cost,
    drive,
    fallback_select,
    run_episode,
)
from .classifier import (
    LabeledExample,
    ModelBank,
    SufficiencyClassifier,
    SufficiencyModel,
    ThresholdSet,
    decide,
    forward,
    train_bank,
    tune_bank,
    tune_thresholds,
)
from .core import EffortStage, InsightStream, PromptTemplate, Question, append_insights, build_slm_input, make_stages
from .traces import TraceRecord, TraceWriter, read_traces, replay
from .uncertainty import FeatureVector, UncertaintyFeaturizer, extract_features

__version__ = "0.1.0"

__all__ = [
    "CascadeConfig",
    "CostReport",
    "EffortStage",
    "EpisodeResult",
    "FeatureVector",
    "InsightStream",
    "LabeledExample",
    "ModelBank",
    "Policy",
    "PromptTemplate",
    "Question",
    "StageRecord",
    "SufficiencyClassifier",
    "SufficiencyModel",
    "ThresholdSet",
    "TraceRecord",
    "TraceWriter",
    "UncertaintyFeaturizer",
    "append_insights",
    "build_slm_input",
    "collect_all_stages",
    "compute_cost",
    "compute_dollar_cost",
    "decide",
    "drive",
    "extract_features",
    "fallback_select",
    "forward",
    "make_stages",
    "read_traces",
    "replay",
    "run_episode",
    "train_bank",
    "tune_bank",
    "tune_thresholds",
]
