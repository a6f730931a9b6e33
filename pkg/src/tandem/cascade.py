"""Mentor/intern cascade: staged judgment, early stop, fallback and cost accounting.

Every policy is driven through a :class:`StageSource`, a per-question store
of stage data.  A live source fills missing entries by calling the
backends; a replay source reads them from a trace and raises
:class:`~tandem.errors.MissingStageDataError` when something was never
recorded.  Live runs and offline replay therefore share one state machine.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .backend.base import Backend, GenerationResult, ModelSpec, TokenScore, Usage
from .classifier import ModelBank, SufficiencyModel, decide
from .core import (
    DEFAULT_STAGES,
    EffortStage,
    InsightStream,
    PromptTemplate,
    Question,
    SlmInput,
    append_insights,
    build_slm_input,
    insight_block,
)
from .errors import BackendError, ClassifierMissingError, MissingPriceError, MissingStageDataError
from .uncertainty import FeatureVector, extract_features

logger = logging.getLogger(__name__)

POLICY_KINDS = ("tandem", "fixed_stage", "one_shot_router", "single_model", "budget_forcing")


@dataclass(frozen=True)
class Policy:
    kind: str
    stage: int | None = None
    model: str | None = None
    budget: int | None = None

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.kind == "fixed_stage" and (self.stage is None or self.stage < 0):
            raise ValueError("fixed_stage needs a non-negative stage")
        if self.kind == "single_model" and self.model not in ("mentor", "intern"):
            raise ValueError("single_model needs model 'mentor' or 'intern'")
        if self.kind == "budget_forcing" and (self.budget is None or self.budget < 0):
            raise ValueError("budget_forcing needs a non-negative budget")

    @classmethod
    def parse(cls, text: str) -> "Policy":
        """Parse ``tandem``, ``fixed:<t>``, ``router``, ``single:<mentor|intern>`` or ``budget:<n>``."""
        head, _, arg = text.strip().partition(":")
        if head == "tandem" and not arg:
            return cls("tandem")
        if head in ("fixed", "fixed_stage"):
            return cls("fixed_stage", stage=int(arg))
        if head in ("router", "one_shot_router") and not arg:
            return cls("one_shot_router")
        if head in ("single", "single_model"):
            return cls("single_model", model=arg)
        if head in ("budget", "budget_forcing"):
            return cls("budget_forcing", budget=int(arg))
        raise ValueError(f"cannot parse policy {text!r}")

    def __str__(self) -> str:
        if self.kind == "fixed_stage":
            return f"fixed:{self.stage}"
        if self.kind == "one_shot_router":
            return "router"
        if self.kind == "single_model":
            return f"single:{self.model}"
        if self.kind == "budget_forcing":
            return f"budget:{self.budget}"
        return "tandem"

    @property
    def needs_classifier(self) -> bool:
        return self.kind in ("tandem", "one_shot_router")


@dataclass
class CascadeConfig:
    stages: tuple[EffortStage, ...] = DEFAULT_STAGES
    allow_stage0_exit: bool = False
    answer_template: PromptTemplate = field(default_factory=PromptTemplate.default_answer)
    insight_template: PromptTemplate = field(default_factory=PromptTemplate.default_insight_user)

    @property
    def last_stage(self) -> int:
        return len(self.stages) - 1


# -- records --------------------------------------------------------------------


@dataclass
class StageTrace:
    """Raw data gathered for one stage of one question."""

    stage: int
    budget: int
    mentor_tokens: int | None = None
    insight_delta_text: str | None = None
    finish_reason: str | None = None
    mentor_usage: Usage | None = None
    input_tokens: int | None = None
    token_scores: list[TokenScore] | None = None
    score_prompt_tokens: int | None = None
    features: FeatureVector | None = None
    score: float | None = None
    decision: int | None = None
    answer: str | None = None
    answer_tokens: int | None = None
    answer_usage: Usage | None = None
    answer_finish: str | None = None
    grade: int | None = None


@dataclass
class BaselineTrace:
    """Mentor-only generations used by the single-mentor and budget-forcing baselines."""

    answer: str
    mentor_tokens: int
    usage: Usage
    reasoning_tokens: int = 0
    grade: int | None = None


@dataclass
class StageRecord:
    stage: int
    mentor_tokens_cumulative: int
    features: FeatureVector | None = None
    score: float | None = None
    decision: int | None = None
    judged: bool = False
    answer: str | None = None
    intern_answer_tokens: int = 0


@dataclass
class CostReport:
    tflops: float
    mentor_tokens: int
    intern_generated_tokens: int
    dollars: float | None = None
    mentor_usage: Usage = field(default_factory=Usage)
    intern_usage: Usage = field(default_factory=Usage)


@dataclass
class EpisodeResult:
    question_id: str
    policy: Policy
    stages: list[StageRecord]
    selected_stage: int
    final_answer: str
    cost: CostReport
    fallback_used: bool = False
    subject: str = ""
    correct: bool | None = None
    stage_grades: list[int] | None = None

    @property
    def inference_length(self) -> int:
        return self.cost.mentor_tokens + self.cost.intern_generated_tokens


# -- cost -----------------------------------------------------------------------


def compute_cost(L_L: int, L_S: int, theta_L: int, theta_S: int) -> float:
    """TFLOPs: 2 * (|theta_L| * L_L + |theta_S| * (L_L + L_S)) / 1e12."""
    if min(L_L, L_S, theta_L, theta_S) < 0:
        raise ValueError("cost inputs must be non-negative")
    flops = 2 * (int(theta_L) * int(L_L) + int(theta_S) * (int(L_L) + int(L_S)))
    return flops / 10**12


def compute_dollar_cost(usage: Iterable[tuple[ModelSpec, Usage]]) -> float:
    """Sum of (input * price_in + output * price_out) / 1000 over models."""
    total = 0.0
    for spec, u in usage:
        for tokens, price, label in (
            (u.prompt_tokens, spec.price_per_1k_input, "input"),
            (u.completion_tokens, spec.price_per_1k_output, "output"),
        ):
            if tokens == 0:
                continue
            if price is None:
                raise MissingPriceError(f"{spec.name} has {tokens} {label} tokens but no {label} price")
            total += tokens * price / 1000.0
    return total


def fallback_select(scores: Sequence[float]) -> int:
    """Index of the highest sufficiency score; ties go to the earliest (cheapest) stage."""
    best = 0
    for t, s in enumerate(scores):
        if s > scores[best]:
            best = t
    return best


# -- stage sources --------------------------------------------------------------


@dataclass
class LiveContext:
    mentor: ModelSpec
    intern: ModelSpec
    mentor_backend: Backend
    intern_backend: Backend


class StageSource:
    """Per-question stage data; optionally backed by live model calls."""

    def __init__(
        self,
        question: Question,
        cfg: CascadeConfig,
        store: dict[int, StageTrace] | None = None,
        live: LiveContext | None = None,
        baselines: dict[str, BaselineTrace] | None = None,
    ):
        self.q = question
        self.cfg = cfg
        self.live = live
        self.store = store if store is not None else {}
        for st in cfg.stages:
            self.store.setdefault(st.index, StageTrace(st.index, st.cumulative_budget_tokens))
        self.store[0].mentor_tokens = 0
        self.baselines = baselines if baselines is not None else {}
        self.stream = InsightStream(question.id)
        self._mentor_seen: set[int] = set()
        self._score_seen: set[int] = set()
        self._answer_seen: set[int] = set()
        self._baseline_seen: set[str] = set()

    def _missing(self, what: str, t) -> MissingStageDataError:
        return MissingStageDataError(f"{self.q.id}: no {what} recorded for stage {t}")

    # mentor side
    def mentor_tokens(self, t: int) -> int:
        for s in range(1, t + 1):
            if s not in self._mentor_seen:
                self._extend(s)
                self._mentor_seen.add(s)
        return self.store[t].mentor_tokens

    def _extend(self, t: int) -> None:
        st = self.store[t]
        if st.mentor_tokens is not None:
            return
        if self.live is None:
            raise self._missing("mentor insights", t)
        stage = self.cfg.stages[t]
        if self.stream.finished:
            res = GenerationResult("", (), "stop_marker", Usage())
        else:
            res = self.live.mentor_backend.generate_insights(
                self.live.mentor, self.q, self.stream, stage, self.cfg.insight_template
            )
        self.stream = append_insights(
            self.stream, res.tokens, stage, finished=res.finish_reason == "stop_marker"
        )
        st.mentor_tokens = len(self.stream)
        st.insight_delta_text = res.text
        st.finish_reason = res.finish_reason
        st.mentor_usage = res.usage

    def _insight_text(self, t: int) -> str:
        if self.live is not None:
            return self.stream.text(t)
        return "".join(self.store[s].insight_delta_text or "" for s in range(1, t + 1))

    def _slm_input(self, t: int):
        self.mentor_tokens(t)
        stage = self.cfg.stages[t]
        if self.live is not None:
            backend = self.live.intern_backend
            counter = lambda text: backend.count_tokens(self.live.intern, text)  # noqa: E731
            return build_slm_input(self.q, self.stream, stage, self.cfg.answer_template, counter)
        raise self._missing("intern input", t)

    # intern side
    def features(self, t: int) -> FeatureVector:
        st = self.store[t]
        if t in self._score_seen:
            return st.features
        if st.token_scores is None:
            if self.live is None:
                raise self._missing("token scores", t)
            inp = self._slm_input(t)
            st.token_scores = self.live.intern_backend.score_sequence(self.live.intern, inp)
            st.input_tokens = len(st.token_scores) + 1
            st.score_prompt_tokens = inp.token_count
        else:
            self.mentor_tokens(t)
        self._score_seen.add(t)
        st.features = extract_features(st.token_scores, st.input_tokens)
        return st.features

    def answer(self, t: int) -> tuple[str, int]:
        st = self.store[t]
        if st.answer is None:
            if self.live is None:
                raise self._missing("intern answer", t)
            inp = self._slm_input(t)
            res = self.live.intern_backend.generate_answer(self.live.intern, inp)
            st.answer, st.answer_tokens = res.text, len(res.tokens)
            st.answer_usage, st.answer_finish = res.usage, res.finish_reason
        else:
            self.mentor_tokens(t)
        self._answer_seen.add(t)
        return st.answer, st.answer_tokens

    # baselines
    def mentor_answer(self) -> BaselineTrace:
        return self._baseline("single:mentor", self._live_mentor_answer)

    def budget_forced_answer(self, budget: int) -> BaselineTrace:
        return self._baseline(f"budget:{budget}", lambda: self._live_budget_forced(budget))

    def _baseline(self, key: str, make: Callable[[], BaselineTrace]) -> BaselineTrace:
        if key not in self.baselines:
            if self.live is None:
                raise MissingStageDataError(f"{self.q.id}: no {key} baseline recorded")
            self.baselines[key] = make()
        self._baseline_seen.add(key)
        return self.baselines[key]

    def _live_mentor_answer(self) -> BaselineTrace:
        inp = build_slm_input(
            self.q, InsightStream(self.q.id), self.cfg.stages[0], self.cfg.answer_template,
            lambda text: self.live.mentor_backend.count_tokens(self.live.mentor, text),
        )
        res = self.live.mentor_backend.generate_answer(self.live.mentor, inp)
        return BaselineTrace(res.text, len(res.tokens), res.usage)

    def _live_budget_forced(self, budget: int) -> BaselineTrace:
        backend, mentor = self.live.mentor_backend, self.live.mentor
        reasoning = backend.generate_reasoning(mentor, self.q, budget)
        rendered = self.cfg.answer_template.render(self.q.text, insight_block(reasoning.text))
        inp = SlmInput(self.q.id, self.cfg.stages[0], rendered, backend.count_tokens(mentor, rendered))
        res = backend.generate_answer(mentor, inp)
        n = len(reasoning.tokens) + len(res.tokens)
        return BaselineTrace(res.text, n, reasoning.usage + res.usage, len(reasoning.tokens))

    # accounting
    def mentor_usage(self) -> Usage:
        u = Usage()
        for t in self._mentor_seen:
            u = u + (self.store[t].mentor_usage or Usage())
        for key in self._baseline_seen:
            u = u + self.baselines[key].usage
        return u

    def intern_usage(self) -> Usage:
        u = Usage()
        for t in self._score_seen:
            u = u + Usage(self.store[t].score_prompt_tokens or 0, 0)
        for t in self._answer_seen:
            u = u + (self.store[t].answer_usage or Usage())
        return u


# -- state machine ----------------------------------------------------------------


def _judge(source: StageSource, model: SufficiencyModel, t: int, judged: bool) -> StageRecord:
    L = source.mentor_tokens(t)
    f = source.features(t)
    s = model.score(f)
    y = decide(s, model.thresholds[t])
    return StageRecord(t, L, f, s, y, judged)


def drive(
    policy: Policy,
    source: StageSource,
    models: tuple[ModelSpec, ModelSpec],
    model: SufficiencyModel | None,
) -> EpisodeResult:
    """Run ``policy`` over ``source`` and account its cost."""
    mentor, intern = models
    cfg = source.cfg
    last = cfg.last_stage
    if policy.needs_classifier:
        if model is None:
            raise ClassifierMissingError(f"policy {policy} needs a trained sufficiency model")
        if model.thresholds is None:
            raise ClassifierMissingError("sufficiency model has no tuned thresholds")

    records: list[StageRecord] = []
    fallback = False
    mentor_only = policy.kind == "budget_forcing" or (
        policy.kind == "single_model" and policy.model == "mentor"
    )
    if mentor_only:
        if policy.kind == "budget_forcing":
            base = source.budget_forced_answer(policy.budget)
        else:
            base = source.mentor_answer()
        # the mentor generates everything, so its parameters are billed for all tokens
        cost = CostReport(
            compute_cost(0, base.mentor_tokens, 0, mentor.param_count),
            base.mentor_tokens,
            0,
            mentor_usage=source.mentor_usage(),
        )
        _price(cost, mentor, intern)
        rec = StageRecord(0, 0, answer=base.answer)
        return EpisodeResult(
            source.q.id, policy, [rec], 0, base.answer, cost, subject=source.q.subject
        )
    if policy.kind == "single_model":
        selected = 0
        records.append(StageRecord(0, 0))
    elif policy.kind == "fixed_stage":
        selected = policy.stage
        if selected > last:
            raise ValueError(f"fixed stage {selected} exceeds last stage {last}")
        records.append(StageRecord(selected, source.mentor_tokens(selected)))
    elif policy.kind == "one_shot_router":
        rec0 = _judge(source, model, 0, judged=True)
        tau = model.thresholds.router if model.thresholds.router is not None else model.thresholds[0]
        rec0.decision = decide(rec0.score, tau)
        records.append(rec0)
        selected = 0 if rec0.decision else last
        if selected:
            records.append(StageRecord(selected, source.mentor_tokens(selected)))
    else:
        selected = None
        rec0 = _judge(source, model, 0, judged=cfg.allow_stage0_exit)
        records.append(rec0)
        if rec0.judged and rec0.decision:
            selected = 0
        else:
            for t in range(1, last + 1):
                rec = _judge(source, model, t, judged=True)
                records.append(rec)
                if rec.decision:
                    selected = t
                    break
        if selected is None:
            fallback = True
            selected = fallback_select([r.score for r in records])

    text, n_answer = source.answer(selected)
    for rec in records:
        if rec.stage == selected:
            rec.answer, rec.intern_answer_tokens = text, n_answer
    L_L = max(r.mentor_tokens_cumulative for r in records)
    cost = CostReport(
        compute_cost(L_L, n_answer, mentor.param_count, intern.param_count),
        L_L,
        n_answer,
        mentor_usage=source.mentor_usage(),
        intern_usage=source.intern_usage(),
    )
    _price(cost, mentor, intern)
    return EpisodeResult(
        source.q.id, policy, records, selected, text, cost, fallback, subject=source.q.subject
    )


def _price(cost: CostReport, mentor: ModelSpec, intern: ModelSpec) -> None:
    try:
        cost.dollars = compute_dollar_cost([(mentor, cost.mentor_usage), (intern, cost.intern_usage)])
    except MissingPriceError:
        cost.dollars = None


def _resolve_model(bank: ModelBank | SufficiencyModel | None, q: Question, policy: Policy):
    if bank is None or not policy.needs_classifier:
        return bank if isinstance(bank, SufficiencyModel) else None
    if isinstance(bank, SufficiencyModel):
        return bank
    return bank.for_subject(q.subject)


def run_episode(
    q: Question,
    policy: Policy,
    models: tuple[ModelSpec, ModelSpec],
    backends: tuple[Backend, Backend],
    clf: ModelBank | SufficiencyModel | None = None,
    cfg: CascadeConfig | None = None,
    grader: Callable[[str, str], int] | None = None,
) -> tuple[EpisodeResult, StageSource]:
    """Run one question live; returns the result and the filled stage source."""
    cfg = cfg or CascadeConfig()
    live = LiveContext(models[0], models[1], backends[0], backends[1])
    source = StageSource(q, cfg, live=live)
    model = _resolve_model(clf, q, policy)
    try:
        result = drive(policy, source, models, model)
    except BackendError as exc:
        exc.partial = source
        raise
    if grader is not None:
        result.correct = bool(grader(result.final_answer, q.gold_answer))
    return result, source


def collect_all_stages(
    q: Question,
    models: tuple[ModelSpec, ModelSpec],
    backends: tuple[Backend, Backend],
    cfg: CascadeConfig | None = None,
    grader: Callable[[str, str], int] | None = None,
    clf: ModelBank | SufficiencyModel | None = None,
    baselines: Sequence[Policy] = (),
) -> StageSource:
    """Data-collection mode: score and answer (and grade) every stage regardless of decisions."""
    cfg = cfg or CascadeConfig()
    live = LiveContext(models[0], models[1], backends[0], backends[1])
    source = StageSource(q, cfg, live=live)
    try:
        for t in range(cfg.last_stage + 1):
            source.features(t)
            source.answer(t)
        for pol in baselines:
            if pol.kind == "budget_forcing":
                source.budget_forced_answer(pol.budget)
            elif pol.kind == "single_model" and pol.model == "mentor":
                source.mentor_answer()
    except BackendError as exc:
        exc.partial = source
        raise
    if grader is not None:
        for st in source.store.values():
            st.grade = int(grader(st.answer, q.gold_answer))
        for base in source.baselines.values():
            base.grade = int(grader(base.answer, q.gold_answer))
    if clf is not None:
        model = clf if isinstance(clf, SufficiencyModel) else clf.for_subject(q.subject)
        for t, st in source.store.items():
            st.score = model.score(st.features)
            if model.thresholds is not None:
                st.decision = decide(st.score, model.thresholds[t])
    return source
