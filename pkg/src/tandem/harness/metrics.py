"""Training-set construction and evaluation aggregates over episode results."""

from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from sklearn.metrics import f1_score, precision_score, recall_score

from ..cascade import EpisodeResult
from ..classifier import LabeledExample
from ..errors import EmptyInputError, MissingGradesError
from ..traces import TraceRecord
from ..uncertainty import extract_features

OVERALL = "Overall"


def build_training_set(records: Iterable[TraceRecord]) -> list[LabeledExample]:
    """One example per (question, stage), labeled with that stage's grade."""
    out: list[LabeledExample] = []
    for rec in records:
        for st in rec.stages:
            if st.answer is None or st.grade is None:
                raise MissingGradesError(f"{rec.question.id}: stage {st.stage} has no graded answer")
            if st.token_scores is None:
                raise MissingGradesError(f"{rec.question.id}: stage {st.stage} has no token scores")
            f = extract_features(st.token_scores, st.input_tokens)
            out.append(LabeledExample(f, int(st.grade), st.stage, rec.question.id, rec.question.subject))
    return out


# -- Table-1 style metrics -------------------------------------------------------


@dataclass
class MetricsReport:
    accuracy: float
    avg_inference_length: float
    avg_cost_tflops: float
    n: int
    avg_mentor_tokens: float = 0.0
    avg_intern_tokens: float = 0.0
    avg_dollars: float | None = None
    groups: dict[str, "MetricsReport"] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["groups"] = {k: v.to_dict() for k, v in self.groups.items()}
        return d


def _aggregate(results: Sequence[EpisodeResult]) -> MetricsReport:
    correct = 0
    for r in results:
        if r.correct is None:
            raise MissingGradesError(f"{r.question_id}: episode has no grade")
        correct += bool(r.correct)
    n = len(results)
    dollars = [r.cost.dollars for r in results]
    return MetricsReport(
        accuracy=100.0 * correct / n,
        avg_inference_length=float(np.mean([r.inference_length for r in results])),
        avg_cost_tflops=float(np.mean([r.cost.tflops for r in results])),
        n=n,
        avg_mentor_tokens=float(np.mean([r.cost.mentor_tokens for r in results])),
        avg_intern_tokens=float(np.mean([r.cost.intern_generated_tokens for r in results])),
        avg_dollars=None if any(d is None for d in dollars) else float(np.mean(dollars)),
    )


def evaluate(results: Sequence[EpisodeResult], by_subject: bool = True) -> MetricsReport:
    if not results:
        raise EmptyInputError("no episode results to evaluate")
    report = _aggregate(results)
    if by_subject:
        groups: dict[str, list[EpisodeResult]] = {}
        for r in results:
            groups.setdefault(r.subject or "", []).append(r)
        if len(groups) > 1 or "" not in groups:
            report.groups = {k: _aggregate(v) for k, v in sorted(groups.items())}
    return report


# -- stage distribution ------------------------------------------------------------


@dataclass
class StageDistribution:
    stages: int
    rows: dict[str, list[float]]
    counts: dict[str, int]

    def to_dict(self) -> dict:
        return {"stages": self.stages, "rows": self.rows, "counts": self.counts}


def _percentages(selected: Sequence[int], stages: int) -> list[float]:
    c = Counter(selected)
    return [100.0 * c.get(t, 0) / len(selected) for t in range(stages)]


def stage_distribution(results: Sequence[EpisodeResult], stages: int = 4, by_subject: bool = True) -> StageDistribution:
    """Share of episodes answered at each stage, per subject plus an overall row."""
    if not results:
        raise EmptyInputError("no episode results")
    stages = max(stages, 1 + max(r.selected_stage for r in results))
    rows: dict[str, list[float]] = {}
    counts: dict[str, int] = {}
    if by_subject:
        groups: dict[str, list[int]] = {}
        for r in results:
            groups.setdefault(r.subject or "", []).append(r.selected_stage)
        if len(groups) > 1 or "" not in groups:
            for key, sel in sorted(groups.items()):
                rows[key], counts[key] = _percentages(sel, stages), len(sel)
    all_sel = [r.selected_stage for r in results]
    rows[OVERALL], counts[OVERALL] = _percentages(all_sel, stages), len(all_sel)
    return StageDistribution(stages, rows, counts)


# -- routing taxonomy --------------------------------------------------------------


@dataclass
class RoutingTaxonomy:
    correct: int = 0
    premature_stop: int = 0
    late_stop: int = 0
    unsolvable: int = 0

    @property
    def total(self) -> int:
        return self.correct + self.premature_stop + self.late_stop + self.unsolvable

    @property
    def incorrect(self) -> int:
        return self.total - self.correct

    @property
    def misrouted_share(self) -> float | None:
        """Fraction of wrong answers that some other stage would have fixed."""
        wrong = self.incorrect
        return None if wrong == 0 else (self.premature_stop + self.late_stop) / wrong

    def to_dict(self) -> dict:
        return {**asdict(self), "total": self.total, "misrouted_share": self.misrouted_share}


def classify_route(selected: int, grades: Sequence[int]) -> str:
    if grades[selected]:
        return "correct"
    if not any(grades):
        return "unsolvable"
    # an earlier correct stage wins over a later one: the cheaper fix was missed
    if any(grades[:selected]):
        return "late_stop"
    return "premature_stop"


def routing_analysis(results: Iterable[EpisodeResult], stages: int = 4) -> RoutingTaxonomy:
    tax = RoutingTaxonomy()
    for r in results:
        g = r.stage_grades
        if g is None or len(g) < stages or any(x is None for x in g):
            raise MissingGradesError(f"{r.question_id}: needs grades for all {stages} stages")
        kind = classify_route(r.selected_stage, g)
        setattr(tax, kind, getattr(tax, kind) + 1)
    return tax


# -- classifier quality ------------------------------------------------------------


@dataclass
class StageClassifierMetrics:
    stage: int
    support: int
    precision: float | None = None
    recall: float | None = None
    f1: float | None = None


@dataclass
class ClassifierReport:
    stages: list[StageClassifierMetrics]
    average: dict[str, float | None]

    def to_dict(self) -> dict:
        return {"stages": [asdict(s) for s in self.stages], "average": self.average}


def _defined(x: float) -> float | None:
    return None if np.isnan(x) else float(x)


def classifier_metrics(
    labels: Sequence[int], predictions: Sequence[int], stages: Sequence[int]
) -> ClassifierReport:
    """Per-stage binary precision/recall/F1 (positive class = sufficient) and their macro average.

    A stage whose labels lack either class reports no metrics; a cell whose
    denominator is zero is likewise absent.
    """
    y = np.asarray(labels, dtype=int)
    p = np.asarray(predictions, dtype=int)
    s = np.asarray(stages, dtype=int)
    if not (len(y) == len(p) == len(s)):
        raise ValueError("labels, predictions and stages must have equal length")
    rows = []
    for t in sorted(set(s.tolist())):
        m = s == t
        row = StageClassifierMetrics(t, int(m.sum()))
        if len(set(y[m].tolist())) == 2:
            row.precision = _defined(precision_score(y[m], p[m], zero_division=np.nan))
            row.recall = _defined(recall_score(y[m], p[m], zero_division=np.nan))
            if row.precision is not None and row.recall is not None:
                row.f1 = _defined(f1_score(y[m], p[m], zero_division=np.nan))
        rows.append(row)
    average = {}
    for name in ("precision", "recall", "f1"):
        vals = [getattr(r, name) for r in rows if getattr(r, name) is not None]
        average[name] = float(np.mean(vals)) if vals else None
    return ClassifierReport(rows, average)


def stage_predictions(records: Iterable[TraceRecord]) -> tuple[list[int], list[int], list[int]]:
    """(labels, decisions, stages) from graded all-stage traces with stored decisions."""
    labels, preds, stages = [], [], []
    for rec in records:
        for st in rec.stages:
            if st.grade is None or st.decision is None:
                raise MissingGradesError(f"{rec.question.id}: stage {st.stage} lacks grade or decision")
            labels.append(int(st.grade))
            preds.append(int(st.decision))
            stages.append(st.stage)
    return labels, preds, stages


# -- dollar cost -------------------------------------------------------------------


@dataclass
class DollarRow:
    policy: str
    n: int
    avg_dollars: float | None
    mentor_prompt_tokens: float
    mentor_completion_tokens: float
    intern_prompt_tokens: float
    intern_completion_tokens: float


def dollar_table(results_by_policy: dict[str, Sequence[EpisodeResult]]) -> list[DollarRow]:
    rows = []
    for name, results in results_by_policy.items():
        if not results:
            continue
        dollars = [r.cost.dollars for r in results]
        rows.append(
            DollarRow(
                name,
                len(results),
                None if any(d is None for d in dollars) else float(np.mean(dollars)),
                float(np.mean([r.cost.mentor_usage.prompt_tokens for r in results])),
                float(np.mean([r.cost.mentor_usage.completion_tokens for r in results])),
                float(np.mean([r.cost.intern_usage.prompt_tokens for r in results])),
                float(np.mean([r.cost.intern_usage.completion_tokens for r in results])),
            )
        )
    return rows
