from __future__ import annotations

from pathlib import Path

from .base import Backend, Decoding, GenerationResult, ModelSpec, TokenScore, Usage
from .http import OpenAICompatibleBackend
from .mock import MockBackend


def backend_for(model: ModelSpec, base_dir: str | Path = ".", top_k: int = 20) -> Backend:
    """Pick the backend implied by ``model.endpoint``."""
    if model.is_mock:
        return MockBackend.from_endpoint(model.endpoint, base_dir, top_k=top_k)
    return OpenAICompatibleBackend(top_k=top_k)


__all__ = [
    "Backend",
    "Decoding",
    "GenerationResult",
    "MockBackend",
    "ModelSpec",
    "OpenAICompatibleBackend",
    "TokenScore",
    "Usage",
    "backend_for",
]
