"""JSON Lines persistence of episodes and offline replay.

One :class:`TraceRecord` per line.  The field layout is documented by
``schemas/trace.schema.json``.  Files ending in ``.gz`` are gzip-compressed;
each appended record becomes its own gzip member so concurrent appenders
never interleave partial data.
"""

from __future__ import annotations

import copy
import fcntl
import gzip
import io
import json
import threading
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .backend.base import ModelSpec, TokenScore, Usage
from .classifier import ModelBank, SufficiencyModel
from .core import DEFAULT_BUDGETS, Question, make_stages
from .cascade import (
    BaselineTrace,
    CascadeConfig,
    CostReport,
    EpisodeResult,
    Policy,
    StageRecord,
    StageSource,
    StageTrace,
    _resolve_model,
    drive,
)
from .errors import MissingStageDataError, TraceSchemaError
from .uncertainty import FeatureVector

TRACE_SCHEMA_VERSION = 1


def schema_document() -> dict:
    """The published JSON schema for one trace line."""
    text = resources.files("tandem.schemas").joinpath("trace.schema.json").read_text("utf-8")
    return json.loads(text)


def _usage(d) -> Usage | None:
    return None if d is None else Usage(int(d["prompt_tokens"]), int(d["completion_tokens"]))


def _usage_dict(u: Usage | None):
    return None if u is None else asdict(u)


def stage_to_dict(st: StageTrace) -> dict:
    return {
        "stage": st.stage,
        "budget": st.budget,
        "mentor_tokens": st.mentor_tokens,
        "insight_delta_text": st.insight_delta_text,
        "finish_reason": st.finish_reason,
        "mentor_usage": _usage_dict(st.mentor_usage),
        "input_tokens": st.input_tokens,
        "score_prompt_tokens": st.score_prompt_tokens,
        "token_scores": None if st.token_scores is None else [s.to_json() for s in st.token_scores],
        "features": None if st.features is None else st.features.to_list(),
        "score": st.score,
        "decision": st.decision,
        "answer": st.answer,
        "answer_tokens": st.answer_tokens,
        "answer_usage": _usage_dict(st.answer_usage),
        "answer_finish": st.answer_finish,
        "grade": st.grade,
    }


def stage_from_dict(d: dict) -> StageTrace:
    scores = d.get("token_scores")
    feats = d.get("features")
    return StageTrace(
        stage=int(d["stage"]),
        budget=int(d["budget"]),
        mentor_tokens=d.get("mentor_tokens"),
        insight_delta_text=d.get("insight_delta_text"),
        finish_reason=d.get("finish_reason"),
        mentor_usage=_usage(d.get("mentor_usage")),
        input_tokens=d.get("input_tokens"),
        score_prompt_tokens=d.get("score_prompt_tokens"),
        token_scores=None if scores is None else [TokenScore.from_json(s) for s in scores],
        features=None if feats is None else FeatureVector.from_array(feats),
        score=d.get("score"),
        decision=d.get("decision"),
        answer=d.get("answer"),
        answer_tokens=d.get("answer_tokens"),
        answer_usage=_usage(d.get("answer_usage")),
        answer_finish=d.get("answer_finish"),
        grade=d.get("grade"),
    )


def episode_to_dict(ep: EpisodeResult) -> dict:
    return {
        "question_id": ep.question_id,
        "subject": ep.subject,
        "policy": str(ep.policy),
        "selected_stage": ep.selected_stage,
        "final_answer": ep.final_answer,
        "fallback_used": ep.fallback_used,
        "correct": ep.correct,
        "stage_grades": ep.stage_grades,
        "cost": {
            "tflops": ep.cost.tflops,
            "mentor_tokens": ep.cost.mentor_tokens,
            "intern_generated_tokens": ep.cost.intern_generated_tokens,
            "dollars": ep.cost.dollars,
            "mentor_usage": asdict(ep.cost.mentor_usage),
            "intern_usage": asdict(ep.cost.intern_usage),
        },
        "stages": [
            {
                "stage": r.stage,
                "mentor_tokens_cumulative": r.mentor_tokens_cumulative,
                "features": None if r.features is None else r.features.to_list(),
                "score": r.score,
                "decision": r.decision,
                "judged": r.judged,
                "answer": r.answer,
                "intern_answer_tokens": r.intern_answer_tokens,
            }
            for r in ep.stages
        ],
    }


def episode_from_dict(d: dict) -> EpisodeResult:
    c = d["cost"]
    cost = CostReport(
        float(c["tflops"]),
        int(c["mentor_tokens"]),
        int(c["intern_generated_tokens"]),
        c.get("dollars"),
        _usage(c.get("mentor_usage")) or Usage(),
        _usage(c.get("intern_usage")) or Usage(),
    )
    stages = [
        StageRecord(
            r["stage"],
            r["mentor_tokens_cumulative"],
            None if r.get("features") is None else FeatureVector.from_array(r["features"]),
            r.get("score"),
            r.get("decision"),
            r.get("judged", False),
            r.get("answer"),
            r.get("intern_answer_tokens", 0),
        )
        for r in d["stages"]
    ]
    return EpisodeResult(
        d["question_id"],
        Policy.parse(d["policy"]),
        stages,
        int(d["selected_stage"]),
        d["final_answer"],
        cost,
        bool(d.get("fallback_used", False)),
        d.get("subject", ""),
        d.get("correct"),
        d.get("stage_grades"),
    )


@dataclass
class TraceRecord:
    question: Question
    models: dict[str, ModelSpec]
    stages: list[StageTrace]
    budgets: tuple[int, ...] = DEFAULT_BUDGETS
    all_stages: bool = False
    baselines: dict[str, BaselineTrace] = field(default_factory=dict)
    episode: EpisodeResult | None = None
    recorded_at: str = ""
    schema_version: int = TRACE_SCHEMA_VERSION

    def stage(self, t: int) -> StageTrace:
        for st in self.stages:
            if st.stage == t:
                return st
        raise MissingStageDataError(f"{self.question.id}: stage {t} not in trace")

    def grades(self) -> list[int] | None:
        g = [st.grade for st in self.stages]
        return None if any(x is None for x in g) else [int(x) for x in g]

    def to_dict(self) -> dict:
        q = self.question
        return {
            "schema_version": self.schema_version,
            "recorded_at": self.recorded_at,
            "question": {
                "id": q.id,
                "text": q.text,
                "gold_answer": q.gold_answer,
                "subject": q.subject,
                "dataset": q.dataset,
            },
            "models": {role: spec.to_dict() for role, spec in self.models.items()},
            "budgets": list(self.budgets),
            "all_stages": self.all_stages,
            "stages": [stage_to_dict(st) for st in sorted(self.stages, key=lambda s: s.stage)],
            "baselines": {
                key: {
                    "answer": b.answer,
                    "mentor_tokens": b.mentor_tokens,
                    "reasoning_tokens": b.reasoning_tokens,
                    "usage": asdict(b.usage),
                    "grade": b.grade,
                }
                for key, b in sorted(self.baselines.items())
            },
            "episode": None if self.episode is None else episode_to_dict(self.episode),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TraceRecord":
        version = d.get("schema_version")
        if version != TRACE_SCHEMA_VERSION:
            raise TraceSchemaError(
                f"trace schema version {version!r} does not match reader version {TRACE_SCHEMA_VERSION}"
            )
        stages = [stage_from_dict(s) for s in d["stages"]]
        if [s.stage for s in stages] != sorted(s.stage for s in stages):
            raise TraceSchemaError("trace stages are not in ascending order")
        baselines = {
            key: BaselineTrace(b["answer"], b["mentor_tokens"], _usage(b["usage"]), b.get("reasoning_tokens", 0), b.get("grade"))
            for key, b in d.get("baselines", {}).items()
        }
        return cls(
            question=Question(**d["question"]),
            models={role: ModelSpec.from_dict(m) for role, m in d["models"].items()},
            stages=stages,
            budgets=tuple(d["budgets"]),
            all_stages=bool(d.get("all_stages", False)),
            baselines=baselines,
            episode=None if d.get("episode") is None else episode_from_dict(d["episode"]),
            recorded_at=d.get("recorded_at", ""),
            schema_version=version,
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, allow_nan=False)


def build_record(
    source: StageSource,
    models: tuple[ModelSpec, ModelSpec],
    episode: EpisodeResult | None = None,
    all_stages: bool = False,
) -> TraceRecord:
    """Snapshot a filled stage source (and the episode run over it) as a trace record."""
    stages = {t: copy.copy(st) for t, st in source.store.items()}
    if episode is not None:
        for rec in episode.stages:
            st = stages[rec.stage]
            if rec.score is not None and st.score is None:
                st.score, st.decision = rec.score, rec.decision
    return TraceRecord(
        question=source.q,
        models={"mentor": models[0], "intern": models[1]},
        stages=[stages[t] for t in sorted(stages)],
        budgets=tuple(st.cumulative_budget_tokens for st in source.cfg.stages[1:]),
        all_stages=all_stages,
        baselines=dict(source.baselines),
        episode=episode,
        recorded_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )


# -- files ----------------------------------------------------------------------


def _is_gzip(path: Path) -> bool:
    return path.suffix == ".gz"


class TraceWriter:
    """Append-only JSONL writer; safe to share across threads and across processes."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._fh = None if _is_gzip(self.path) else open(self.path, "a", encoding="utf-8")

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def write(self, record: TraceRecord | dict | str) -> None:
        if isinstance(record, TraceRecord):
            line = record.to_json()
        elif isinstance(record, dict):
            line = json.dumps(record, ensure_ascii=False, allow_nan=False)
        else:
            line = record
        data = line.rstrip("\n") + "\n"
        with self._lock:
            if self._fh is None:
                with open(self.path, "ab") as raw:
                    fcntl.flock(raw, fcntl.LOCK_EX)
                    try:
                        buf = io.BytesIO()
                        with gzip.GzipFile(fileobj=buf, mode="wb", mtime=0) as gz:
                            gz.write(data.encode("utf-8"))
                        raw.write(buf.getvalue())
                        raw.flush()
                    finally:
                        fcntl.flock(raw, fcntl.LOCK_UN)
            else:
                fcntl.flock(self._fh, fcntl.LOCK_EX)
                try:
                    self._fh.write(data)
                    self._fh.flush()
                finally:
                    fcntl.flock(self._fh, fcntl.LOCK_UN)

    def flush(self) -> None:
        if self._fh is not None:
            with self._lock:
                self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def _open_lines(path: Path) -> Iterator[str]:
    opener = gzip.open if _is_gzip(path) else open
    with opener(path, "rt", encoding="utf-8") as fh:
        yield from fh


def iter_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    for lineno, line in enumerate(_open_lines(Path(path)), start=1):
        if line.strip():
            yield lineno, json.loads(line)


def read_traces(path: str | Path) -> list[TraceRecord]:
    records = []
    for lineno, d in iter_jsonl(path):
        try:
            records.append(TraceRecord.from_dict(d))
        except TraceSchemaError as exc:
            raise TraceSchemaError(f"{path}:{lineno}: {exc}") from None
    return records


def write_results(path: str | Path, episodes: Iterable[EpisodeResult]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    opener = gzip.open if _is_gzip(path) else open
    with opener(path, "wt", encoding="utf-8") as fh:
        for ep in episodes:
            fh.write(json.dumps(episode_to_dict(ep), allow_nan=False) + "\n")


def read_results(path: str | Path) -> list[EpisodeResult]:
    return [episode_from_dict(d) for _, d in iter_jsonl(path)]


# -- replay ---------------------------------------------------------------------


def replay_one(
    record: TraceRecord,
    clf: ModelBank | SufficiencyModel | None,
    policy: Policy,
    allow_stage0_exit: bool = False,
) -> EpisodeResult:
    cfg = CascadeConfig(stages=make_stages(record.budgets), allow_stage0_exit=allow_stage0_exit)
    store = {st.stage: copy.copy(st) for st in record.stages}
    source = StageSource(record.question, cfg, store=store, baselines=dict(record.baselines))
    models = (record.models["mentor"], record.models["intern"])
    result = drive(policy, source, models, _resolve_model(clf, record.question, policy))
    result.stage_grades = record.grades()
    if policy.kind == "budget_forcing" or (policy.kind == "single_model" and policy.model == "mentor"):
        key = "single:mentor" if policy.kind == "single_model" else str(policy)
        grade = record.baselines[key].grade
    else:
        grade = store[result.selected_stage].grade
    result.correct = None if grade is None else bool(grade)
    return result


def replay(
    records: Sequence[TraceRecord],
    clf: ModelBank | SufficiencyModel | None,
    policy: Policy,
    allow_stage0_exit: bool = False,
) -> list[EpisodeResult]:
    """Re-run ``policy`` from stored data only: features, scores, decisions and cost."""
    return [replay_one(r, clf, policy, allow_stage0_exit) for r in records]
