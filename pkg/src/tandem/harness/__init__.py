"""Datasets, grading, and evaluation tables."""

from .datasets import load_dataset
from .grading import GRADERS, GradeResult, extract_boxed, grade_answer, grade_detail, make_grader
from .metrics import (
    ClassifierReport,
    MetricsReport,
    RoutingTaxonomy,
    StageDistribution,
    build_training_set,
    classifier_metrics,
    classify_route,
    dollar_table,
    evaluate,
    routing_analysis,
    stage_distribution,
    stage_predictions,
)
from .report import build_report, render_text, write_report

__all__ = [
    "GRADERS",
    "ClassifierReport",
    "GradeResult",
    "MetricsReport",
    "RoutingTaxonomy",
    "StageDistribution",
    "build_report",
    "build_training_set",
    "classifier_metrics",
    "classify_route",
    "dollar_table",
    "evaluate",
    "extract_boxed",
    "grade_answer",
    "grade_detail",
    "load_dataset",
    "make_grader",
    "render_text",
    "routing_analysis",
    "stage_distribution",
    "stage_predictions",
    "write_report",
]
