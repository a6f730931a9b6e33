"""Deterministic scripted backend driven by a JSON fixture.

A fixture declares a small vocabulary and a list of entries keyed by
``(question_id, operation, stage)``.  Operations:

``insights``
    Mentor tokens.  Either one entry with ``stage`` omitted (or ``"*"``)
    holding the whole logical stream, or one entry per stage holding that
    stage's delta.  Running off the end of the script is an end-of-generation
    marker.
``score``
    Per-position predictive distributions over ``vocab`` for the intern's
    teacher-forced pass.  Given explicitly as ``distributions`` (cycled over
    positions) or through a ``profile``: ``uniform``, ``one_hot``,
    ``peaked`` (``peak`` mass on the realized symbol) or ``dirichlet``
    (``alpha``, ``seed``).  The realized symbol at each position is taken from
    ``realized`` (cycled) or hashed from the input token text.
``answer`` / ``mentor_answer`` / ``reasoning``
    Generated text, as ``text`` or ``tokens``; ``pad_to`` appends filler
    tokens up to a scripted length.

Input text is tokenized on whitespace.
"""

from __future__ import annotations

import json
import math
import re
import zlib
from pathlib import Path
from typing import Any

import numpy as np

from ..core import EffortStage, InsightStream, PromptTemplate, Question, SlmInput
from ..errors import BackendError
from .base import GenerationResult, ModelSpec, TokenScore, Usage, check_insight_request

_TOKEN_RE = re.compile(r"\s*\S+")
FILLER = " ."


def _tokenize_text(text: str) -> list[str]:
    return _TOKEN_RE.findall(text)


class MockBackend:
    """Scripted backend; every call is a pure function of (fixture, arguments)."""

    exact_token_counts = True

    def __init__(self, fixture: dict[str, Any], top_k: int = 20):
        self.vocab: list[str] = list(fixture.get("vocab", []))
        self.top_k = int(fixture.get("top_k", top_k))
        self.default_score: dict | None = fixture.get("default_score")
        self._entries: dict[tuple[str, str, str], dict] = {}
        for entry in fixture.get("entries", []):
            key = (str(entry["question_id"]), entry["operation"], str(entry.get("stage", "*")))
            self._entries[key] = entry
        self.calls: list[tuple[str, str, int]] = []

    @classmethod
    def from_file(cls, path: str | Path, top_k: int = 20) -> "MockBackend":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh), top_k=top_k)

    @classmethod
    def from_endpoint(cls, endpoint: str, base_dir: str | Path = ".", top_k: int = 20):
        path = Path(endpoint.removeprefix("mock:"))
        if not path.is_absolute():
            path = Path(base_dir) / path
        return cls.from_file(path, top_k=top_k)

    def _lookup(self, qid: str, op: str, stage: int | None) -> dict | None:
        if stage is not None:
            entry = self._entries.get((qid, op, str(stage)))
            if entry is not None:
                return entry
        return self._entries.get((qid, op, "*"))

    def _has_staged(self, qid: str, op: str) -> bool:
        return any(k[0] == qid and k[1] == op and k[2] != "*" for k in self._entries)

    @staticmethod
    def _entry_tokens(entry: dict) -> list[str]:
        if "tokens" in entry:
            tokens = [str(t) for t in entry["tokens"]]
        else:
            tokens = _tokenize_text(entry.get("text", ""))
        pad_to = int(entry.get("pad_to", 0))
        if pad_to > len(tokens):
            tokens += [FILLER] * (pad_to - len(tokens))
        return tokens

    def count_tokens(self, model: ModelSpec, text: str) -> int:
        return len(text.split())

    def generate_insights(
        self,
        model: ModelSpec,
        q: Question,
        prior: InsightStream,
        target_stage: EffortStage,
        template: PromptTemplate,
    ) -> GenerationResult:
        remaining = check_insight_request(model, prior, target_stage)
        self.calls.append((q.id, "insights", target_stage.index))
        if self._has_staged(q.id, "insights"):
            entry = self._lookup(q.id, "insights", target_stage.index)
            script = self._entry_tokens(entry) if entry else []
            stop = bool(entry.get("stop", False)) if entry else True
        else:
            entry = self._lookup(q.id, "insights", None)
            if entry is None:
                raise BackendError(f"fixture has no insights for {q.id!r}")
            script = self._entry_tokens(entry)[len(prior) :]
            stop = True
        if len(script) > remaining or (len(script) == remaining and not stop):
            tokens, reason = script[:remaining], "budget"
        else:
            tokens, reason = script, "stop_marker"
        prompt = template.render(q.text) + prior.text()
        return GenerationResult(
            "".join(tokens),
            tuple(tokens),
            reason,
            Usage(self.count_tokens(model, prompt), len(tokens)),
        )

    def _distribution(self, spec: dict, position: int, realized: int) -> np.ndarray:
        size = len(self.vocab)
        if "distributions" in spec:
            dists = spec["distributions"]
            p = np.asarray(dists[position % len(dists)], dtype=float)
            if p.shape != (size,):
                raise BackendError(f"distribution has {p.shape} entries, vocab has {size}")
            return p
        profile = spec.get("profile", "uniform")
        if profile == "uniform":
            return np.full(size, 1.0 / size)
        if profile == "one_hot":
            p = np.zeros(size)
            p[realized] = 1.0
            return p
        if profile == "peaked":
            peak = float(spec.get("peak", 0.9))
            p = np.full(size, (1.0 - peak) / (size - 1))
            p[realized] = peak
            return p
        if profile == "dirichlet":
            rng = np.random.default_rng([int(spec.get("seed", 0)), position])
            return rng.dirichlet(np.full(size, float(spec.get("alpha", 1.0))))
        raise BackendError(f"unknown score profile {profile!r}")

    def score_sequence(self, model: ModelSpec, input: SlmInput) -> list[TokenScore]:
        self.calls.append((input.question_id, "score", input.stage.index))
        spec = self._lookup(input.question_id, "score", input.stage.index) or self.default_score
        if spec is None:
            raise BackendError(
                f"fixture has no score entry for {input.question_id!r} stage {input.stage.index}"
            )
        if not self.vocab:
            raise BackendError("fixture declares no vocabulary")
        words = input.rendered_text.split()
        realized_script = spec.get("realized")
        k = min(self.top_k, len(self.vocab))
        scores = []
        for j, word in enumerate(words[1:]):
            if realized_script:
                realized = int(realized_script[j % len(realized_script)])
            else:
                realized = zlib.crc32(word.encode("utf-8")) % len(self.vocab)
            p = self._distribution(spec, j, realized)
            if p[realized] <= 0:
                raise BackendError(f"fixture assigns zero probability to realized token {j}")
            order = sorted(range(len(p)), key=lambda i: (-p[i], i))[:k]
            top = tuple((self.vocab[i], math.log(p[i])) for i in order if p[i] > 0)
            residual = max(0.0, 1.0 - float(sum(p[i] for i in order)))
            scores.append(TokenScore(word, math.log(p[realized]), top, residual))
        return scores

    def _scripted_generation(self, entry: dict, limit: int, prompt_tokens: int) -> GenerationResult:
        tokens = self._entry_tokens(entry)
        reason = "stop_marker"
        if len(tokens) > limit:
            tokens, reason = tokens[:limit], "length_limit"
        return GenerationResult("".join(tokens), tuple(tokens), reason, Usage(prompt_tokens, len(tokens)))

    def generate_answer(self, model: ModelSpec, input: SlmInput) -> GenerationResult:
        op = "answer" if model.role == "intern" else "mentor_answer"
        self.calls.append((input.question_id, op, input.stage.index))
        entry = self._lookup(input.question_id, op, input.stage.index)
        if entry is None:
            raise BackendError(f"fixture has no {op} for {input.question_id!r}")
        return self._scripted_generation(
            entry, model.decoding.max_answer_tokens, self.count_tokens(model, input.rendered_text)
        )

    def generate_reasoning(self, model: ModelSpec, q: Question, max_tokens: int) -> GenerationResult:
        self.calls.append((q.id, "reasoning", 0))
        entry = self._lookup(q.id, "reasoning", None)
        if entry is None:
            raise BackendError(f"fixture has no reasoning for {q.id!r}")
        result = self._scripted_generation(entry, max_tokens, self.count_tokens(model, q.text))
        if result.finish_reason == "length_limit":
            return GenerationResult(result.text, result.tokens, "budget", result.usage)
        return result

    def mentor_calls(self) -> list[tuple[str, str, int]]:
        return [c for c in self.calls if c[1] in ("insights", "mentor_answer", "reasoning")]
