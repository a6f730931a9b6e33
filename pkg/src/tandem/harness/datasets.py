"""JSON Lines dataset readers."""

from __future__ import annotations

import json
from pathlib import Path

from ..core import DATASETS, Question
from ..errors import ParseError, UnknownFormatError
from .grading import extract_boxed


def _gsm8k_gold(answer: str) -> str:
    _, sep, tail = answer.rpartition("####")
    if not sep:
        raise ValueError("answer has no '####' marker")
    return tail.strip().replace(",", "")


def _math(row: dict, lineno: int) -> Question:
    gold = row.get("answer")
    if gold is None:
        gold = extract_boxed(row["solution"])
        if gold is None:
            raise ValueError("solution has no \\boxed{} answer")
    qid = row.get("unique_id") or row.get("id") or f"math-{lineno}"
    return Question(str(qid), row["problem"], str(gold), row.get("subject", ""), "math")


def _gsm8k(row: dict, lineno: int) -> Question:
    qid = row.get("id") or f"gsm8k-{lineno}"
    return Question(str(qid), row["question"], _gsm8k_gold(row["answer"]), row.get("subject", ""), "gsm8k")


def _humaneval(row: dict, lineno: int) -> Question:
    # the external grader receives these fields verbatim
    gold = json.dumps(
        {k: row[k] for k in ("canonical_solution", "test", "entry_point")}, sort_keys=True
    )
    qid = row.get("task_id") or f"humaneval-{lineno}"
    return Question(str(qid), row["prompt"], gold, row.get("subject", ""), "humaneval")


def _custom(row: dict, lineno: int) -> Question:
    return Question(str(row["id"]), row["text"], str(row.get("gold", "")), row.get("subject", ""), "custom")


_READERS = {"math": _math, "gsm8k": _gsm8k, "humaneval": _humaneval, "custom": _custom}


def load_dataset(path: str | Path, format: str) -> list[Question]:
    """Read one question per non-blank line; errors carry the 1-based line number."""
    if format not in DATASETS:
        raise UnknownFormatError(f"unknown dataset format {format!r}; expected one of {DATASETS}")
    reader = _READERS[format]
    out: list[Question] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                if not isinstance(row, dict):
                    raise ValueError("line is not a JSON object")
                q = reader(row, lineno)
            except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
                detail = f"missing field {exc}" if isinstance(exc, KeyError) else str(exc)
                raise ParseError(f"{path}: {detail}", line=lineno) from None
            if q.id in seen:
                raise ParseError(f"{path}: duplicate id {q.id!r}", line=lineno)
            seen.add(q.id)
            out.append(q)
    return out
