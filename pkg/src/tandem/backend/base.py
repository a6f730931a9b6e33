"""Backend-neutral model descriptions and result types."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Protocol

from ..core import EffortStage, InsightStream, PromptTemplate, Question, SlmInput

ROLES = ("mentor", "intern")
FINISH_REASONS = ("budget", "stop_marker", "length_limit")

# tolerance on sum(top-K probs) + residual when the backend reports full coverage
COVERAGE_TOL = 1e-6


@dataclass(frozen=True)
class Decoding:
    temperature: float = 0.0
    top_p: float = 1.0
    frequency_penalty: float = 0.0
    max_answer_tokens: int = 8192
    thinking: bool | None = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must lie in (0, 1]")
        if self.max_answer_tokens < 1:
            raise ValueError("max_answer_tokens must be positive")


@dataclass(frozen=True)
class ModelSpec:
    name: str
    role: str
    param_count: int
    endpoint: str
    price_per_1k_input: float | None = None
    price_per_1k_output: float | None = None
    decoding: Decoding = field(default_factory=Decoding)

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {self.role!r}")
        if self.param_count <= 0:
            raise ValueError("param_count must be positive")

    @property
    def is_mock(self) -> bool:
        return self.endpoint.startswith("mock:")

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: v for k, v in d.items() if v is not None}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        decoding = Decoding(**d.pop("decoding", {}))
        d["param_count"] = int(float(d["param_count"]))
        return cls(decoding=decoding, **d)


@dataclass(frozen=True)
class TokenScore:
    """Teacher-forced score of one input position under the intern."""

    token_text: str
    realized_logprob: float
    top_alternatives: tuple[tuple[str, float], ...] = ()
    residual_mass: float = 0.0

    def __post_init__(self):
        if self.realized_logprob > 0:
            raise ValueError(f"log-probability must be <= 0, got {self.realized_logprob}")
        if not 0.0 <= self.residual_mass <= 1.0:
            raise ValueError(f"residual mass must lie in [0, 1], got {self.residual_mass}")

    def probabilities(self) -> list[float]:
        return [math.exp(lp) for _, lp in self.top_alternatives]

    def coverage(self) -> float:
        return sum(self.probabilities()) + self.residual_mass

    def to_json(self) -> dict:
        return {
            "token": self.token_text,
            "logprob": self.realized_logprob,
            "top": [[t, lp] for t, lp in self.top_alternatives],
            "residual": self.residual_mass,
        }

    @classmethod
    def from_json(cls, d: dict) -> "TokenScore":
        return cls(
            d["token"],
            float(d["logprob"]),
            tuple((t, float(lp)) for t, lp in d["top"]),
            float(d["residual"]),
        )


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int = 0
    completion_tokens: int = 0

    def __add__(self, other: "Usage") -> "Usage":
        return Usage(
            self.prompt_tokens + other.prompt_tokens,
            self.completion_tokens + other.completion_tokens,
        )


@dataclass(frozen=True)
class GenerationResult:
    text: str
    tokens: tuple[str, ...]
    finish_reason: str
    usage: Usage

    def __post_init__(self):
        if self.finish_reason not in FINISH_REASONS:
            raise ValueError(f"unknown finish_reason {self.finish_reason!r}")
        if self.usage.completion_tokens != len(self.tokens):
            raise ValueError("usage.completion_tokens must equal the number of tokens")


class Backend(Protocol):
    """Operations every model backend provides."""

    def count_tokens(self, model: ModelSpec, text: str) -> int: ...

    @property
    def exact_token_counts(self) -> bool: ...

    def generate_insights(
        self,
        model: ModelSpec,
        q: Question,
        prior: InsightStream,
        target_stage: EffortStage,
        template: PromptTemplate,
    ) -> GenerationResult: ...

    def score_sequence(self, model: ModelSpec, input: SlmInput) -> list[TokenScore]: ...

    def generate_answer(self, model: ModelSpec, input: SlmInput) -> GenerationResult: ...

    def generate_reasoning(
        self, model: ModelSpec, q: Question, max_tokens: int
    ) -> GenerationResult: ...


def check_insight_request(model: ModelSpec, prior: InsightStream, target: EffortStage) -> int:
    """Validate a staged insight request and return the remaining token budget."""
    from ..errors import StageOutOfOrderError

    if model.role != "mentor":
        raise ValueError(f"insights come from the mentor, got role {model.role!r}")
    if target.index != prior.last_stage + 1:
        raise StageOutOfOrderError(
            f"stream is at stage {prior.last_stage}, cannot generate stage {target.index}"
        )
    return target.cumulative_budget_tokens - len(prior)

