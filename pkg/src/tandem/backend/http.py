"""Client for OpenAI-compatible inference servers.

Generation goes through ``/chat/completions``.  Teacher-forced scoring needs
prompt log-probabilities, which only the legacy ``/completions`` shape
exposes (``echo=true, max_tokens=0, logprobs=K``); servers without it fail
fast with :class:`~tandem.errors.CapabilityError`.
"""

from __future__ import annotations

import logging
import math
import os
import re
from typing import Any

import httpx

from ..core import EffortStage, InsightStream, PromptTemplate, Question, SlmInput
from ..errors import CapabilityError, TransportError
from .base import GenerationResult, ModelSpec, TokenScore, Usage, check_insight_request

logger = logging.getLogger(__name__)

_FINISH = {"length": "length_limit", "stop": "stop_marker", "eos": "stop_marker"}
_TOKEN_RE = re.compile(r"\s*\S+")


class OpenAICompatibleBackend:
    exact_token_counts = False

    def __init__(
        self,
        client: httpx.Client | None = None,
        top_k: int = 20,
        retries: int = 2,
        timeout: float = 120.0,
        api_key: str | None = None,
        system_template: PromptTemplate | None = None,
    ):
        self.top_k = top_k
        self.retries = retries
        self._client = client or httpx.Client(timeout=timeout)
        self.api_key = api_key if api_key is not None else os.environ.get("OPENAI_API_KEY")
        self.system_template = system_template or PromptTemplate.default_insight_system()

    def close(self) -> None:
        self._client.close()

    def _post(self, model: ModelSpec, path: str, payload: dict[str, Any]) -> dict:
        url = model.endpoint.rstrip("/") + path
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        last_exc: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                resp = self._client.post(url, json=payload, headers=headers)
            except httpx.TransportError as exc:
                last_exc = exc
                logger.warning("request to %s failed (attempt %d): %s", url, attempt + 1, exc)
                continue
            if resp.status_code >= 500:
                last_exc = TransportError(f"{url} returned {resp.status_code}")
                logger.warning("request to %s returned %d (attempt %d)", url, resp.status_code, attempt + 1)
                continue
            if resp.status_code >= 400:
                raise CapabilityError(f"{url} rejected request ({resp.status_code}): {resp.text[:200]}")
            return resp.json()
        raise TransportError(f"request to {url} failed after {self.retries + 1} attempts: {last_exc}")

    def _chat_payload(self, model: ModelSpec, messages: list[dict], max_tokens: int) -> dict:
        dec = model.decoding
        payload = {
            "model": model.name,
            "messages": messages,
            "max_tokens": max_tokens,
            "temperature": dec.temperature,
            "top_p": dec.top_p,
            "frequency_penalty": dec.frequency_penalty,
            "logprobs": True,
        }
        if dec.thinking is not None:
            payload["chat_template_kwargs"] = {"enable_thinking": dec.thinking}
        return payload

    def _chat(self, model: ModelSpec, messages: list[dict], max_tokens: int, extra=None):
        payload = self._chat_payload(model, messages, max_tokens)
        if extra:
            payload.update(extra)
        body = self._post(model, "/chat/completions", payload)
        try:
            choice = body["choices"][0]
            text = choice["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed chat response: {exc}") from exc
        content_lp = (choice.get("logprobs") or {}).get("content")
        if content_lp:
            tokens = tuple(item["token"] for item in content_lp)
        else:
            # no token identities returned; split the text as a documented approximation
            tokens = tuple(_TOKEN_RE.findall(text))
        if len(tokens) > max_tokens:
            raise CapabilityError(
                f"{model.name} produced {len(tokens)} tokens with max_tokens={max_tokens}"
            )
        usage = body.get("usage") or {}
        reason = _FINISH.get(choice.get("finish_reason"), "stop_marker")
        return text, tokens, reason, Usage(int(usage.get("prompt_tokens", 0)), len(tokens))

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
        if remaining <= 0:
            return GenerationResult("", (), "budget", Usage())
        messages = [
            {"role": "system", "content": self.system_template.text},
            {"role": "user", "content": template.render(q.text)},
        ]
        extra = None
        if len(prior):
            messages.append({"role": "assistant", "content": prior.text()})
            extra = {"continue_final_message": True, "add_generation_prompt": False}
        text, tokens, reason, usage = self._chat(model, messages, remaining, extra)
        if reason == "length_limit":
            reason = "budget"
        return GenerationResult(text, tokens, reason, usage)

    def score_sequence(self, model: ModelSpec, input: SlmInput) -> list[TokenScore]:
        payload = {
            "model": model.name,
            "prompt": input.rendered_text,
            "max_tokens": 0,
            "echo": True,
            "logprobs": self.top_k,
            "temperature": 0.0,
        }
        body = self._post(model, "/completions", payload)
        try:
            lp = body["choices"][0]["logprobs"]
            tokens, token_lps, tops = lp["tokens"], lp["token_logprobs"], lp["top_logprobs"]
        except (KeyError, IndexError, TypeError) as exc:
            raise CapabilityError(f"{model.name} did not return prompt logprobs") from exc
        if tokens is None or token_lps is None or tops is None:
            raise CapabilityError(f"{model.name} did not return prompt logprobs")
        scores = []
        for tok, realized, top in zip(tokens, token_lps, tops):
            if realized is None:
                continue
            alts = sorted(((t, min(float(v), 0.0)) for t, v in (top or {}).items()), key=lambda a: -a[1])
            residual = max(0.0, 1.0 - sum(math.exp(v) for _, v in alts))
            scores.append(TokenScore(tok, min(float(realized), 0.0), tuple(alts), min(residual, 1.0)))
        return scores

    def generate_answer(self, model: ModelSpec, input: SlmInput) -> GenerationResult:
        messages = [{"role": "user", "content": input.rendered_text}]
        text, tokens, reason, usage = self._chat(model, messages, model.decoding.max_answer_tokens)
        return GenerationResult(text, tokens, reason, usage)

    def generate_reasoning(self, model: ModelSpec, q: Question, max_tokens: int) -> GenerationResult:
        messages = [{"role": "user", "content": q.text}]
        text, tokens, reason, usage = self._chat(model, messages, max_tokens)
        if reason == "length_limit":
            reason = "budget"
        return GenerationResult(text, tokens, reason, usage)
