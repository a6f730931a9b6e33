"""Domain types and insight-composition primitives.

A mentor's insights for one question form a single token stream.  Effort
stages cut that stream at increasing cumulative budgets, so the stage-``t``
insight text is always a prefix of the stage-``t+1`` text.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .errors import BudgetExceededError, MissingStageBoundaryError, StageOutOfOrderError

DATASETS = ("math", "gsm8k", "humaneval", "custom")
STAGE_LABELS = ("question_only", "low", "medium", "high")
DEFAULT_BUDGETS = (100, 500, 1000)


@dataclass(frozen=True)
class Question:
    id: str
    text: str
    gold_answer: str = ""
    subject: str = ""
    dataset: str = "custom"

    def __post_init__(self):
        if not self.id:
            raise ValueError("question id must be non-empty")
        if not self.text:
            raise ValueError(f"question {self.id!r} has empty text")
        if self.dataset not in DATASETS:
            raise ValueError(f"unknown dataset kind {self.dataset!r}")


@dataclass(frozen=True)
class EffortStage:
    index: int
    label: str
    cumulative_budget_tokens: int

    def __post_init__(self):
        if self.index < 0:
            raise ValueError("stage index must be non-negative")
        if self.index == 0 and self.cumulative_budget_tokens != 0:
            raise ValueError("stage 0 carries no insights and must have budget 0")
        if self.cumulative_budget_tokens < 0:
            raise ValueError("budgets must be non-negative")


def make_stages(budgets: Sequence[int] = DEFAULT_BUDGETS) -> tuple[EffortStage, ...]:
    """Build stage 0 plus one stage per cumulative budget."""
    budgets = [int(b) for b in budgets]
    if any(b <= 0 for b in budgets):
        raise ValueError(f"budgets must be positive, got {budgets}")
    if any(b2 <= b1 for b1, b2 in zip(budgets, budgets[1:])):
        raise ValueError(f"budgets must be strictly increasing, got {budgets}")
    labels = list(STAGE_LABELS) + [f"stage{i}" for i in range(len(STAGE_LABELS), len(budgets) + 1)]
    stages = [EffortStage(0, labels[0], 0)]
    stages += [EffortStage(i, labels[i], b) for i, b in enumerate(budgets, start=1)]
    return tuple(stages)


DEFAULT_STAGES = make_stages()


@dataclass(frozen=True)
class InsightStream:
    """Mentor tokens for one question with the prefix length reached at each stage.

    ``boundaries[t - 1]`` is the prefix length recorded for stage ``t``;
    stage 0 is the empty prefix.
    """

    question_id: str
    tokens: tuple[str, ...] = ()
    boundaries: tuple[int, ...] = ()
    finished: bool = False

    @property
    def stage_boundaries(self) -> dict[int, int]:
        return {t: n for t, n in enumerate(self.boundaries, start=1)}

    @property
    def last_stage(self) -> int:
        return len(self.boundaries)

    def __len__(self) -> int:
        return len(self.tokens)

    def prefix_length(self, stage: int) -> int:
        if stage == 0:
            return 0
        if not 0 < stage <= len(self.boundaries):
            raise MissingStageBoundaryError(
                f"stream for {self.question_id!r} has no boundary for stage {stage}"
            )
        return self.boundaries[stage - 1]

    def prefix_tokens(self, stage: int) -> tuple[str, ...]:
        return self.tokens[: self.prefix_length(stage)]

    def text(self, stage: int | None = None) -> str:
        if stage is None:
            return "".join(self.tokens)
        return "".join(self.prefix_tokens(stage))

    def delta_tokens(self, stage: int) -> tuple[str, ...]:
        start = 0 if stage <= 1 else self.prefix_length(stage - 1)
        return self.tokens[start : self.prefix_length(stage)]


def append_insights(
    prev: InsightStream,
    delta_tokens: Iterable[str],
    stage: EffortStage,
    finished: bool = False,
) -> InsightStream:
    """Extend ``prev`` with the tokens generated for ``stage``."""
    delta = tuple(delta_tokens)
    if stage.index != prev.last_stage + 1:
        raise StageOutOfOrderError(
            f"expected stage {prev.last_stage + 1}, got stage {stage.index}"
        )
    new_len = len(prev.tokens) + len(delta)
    if new_len > stage.cumulative_budget_tokens:
        raise BudgetExceededError(
            f"stage {stage.index} budget is {stage.cumulative_budget_tokens} tokens, "
            f"stream would reach {new_len}"
        )
    return InsightStream(
        question_id=prev.question_id,
        tokens=prev.tokens + delta,
        boundaries=prev.boundaries + (new_len,),
        finished=prev.finished or finished,
    )


def _load_prompt(name: str) -> str:
    return resources.files("tandem.prompts").joinpath(name).read_text(encoding="utf-8")


@dataclass(frozen=True)
class PromptTemplate:
    """Plain-text template with ``{{question}}`` and ``{{insights}}`` placeholders."""

    text: str
    name: str = "custom"

    @classmethod
    def from_file(cls, path: str | Path) -> "PromptTemplate":
        path = Path(path)
        return cls(path.read_text(encoding="utf-8"), name=path.name)

    @classmethod
    def default_answer(cls) -> "PromptTemplate":
        return cls(_load_prompt("answer.txt"), name="answer")

    @classmethod
    def default_insight_system(cls) -> "PromptTemplate":
        return cls(_load_prompt("insight_system.txt"), name="insight_system")

    @classmethod
    def default_insight_user(cls) -> "PromptTemplate":
        return cls(_load_prompt("insight_user.txt"), name="insight_user")

    def render(self, question: str, insights: str = "") -> str:
        return self.text.replace("{{question}}", question).replace("{{insights}}", insights)


def insight_block(text: str) -> str:
    """Wrap insight text, verbatim, in a labeled block; empty text gives an empty block."""
    if not text:
        return ""
    return f"[Thinking Insights]\n{text.strip()}\n[/Thinking Insights]\n"


def whitespace_token_count(text: str) -> int:
    return len(text.split())


@dataclass(frozen=True)
class SlmInput:
    question_id: str
    stage: EffortStage
    rendered_text: str
    token_count: int
    approximate_count: bool = field(default=False, compare=False)

    def __post_init__(self):
        if self.token_count < 1:
            raise ValueError(f"intern input for {self.question_id!r} has no tokens")


def build_slm_input(
    q: Question,
    stream: InsightStream,
    stage: EffortStage,
    template: PromptTemplate,
    count_tokens: Callable[[str], int] | None = None,
) -> SlmInput:
    """Render the question plus the stage-``t`` insight prefix for the intern."""
    if stage.index > 0:
        stream.prefix_length(stage.index)
    insights = insight_block(stream.text(stage.index)) if stage.index > 0 else ""
    rendered = template.render(q.text, insights)
    approximate = count_tokens is None
    counter = count_tokens or whitespace_token_count
    return SlmInput(q.id, stage, rendered, counter(rendered), approximate_count=approximate)
