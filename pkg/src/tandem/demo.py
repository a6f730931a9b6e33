"""Synthetic mock workspace: fixture, dataset and config for an offline end-to-end run.

Each question has a *solve pattern*: the set of stages at which the intern
answers correctly.  When a stage is solvable the intern's teacher-forced
distributions are sharply peaked; otherwise they are drawn from a flat
Dirichlet, so the uncertainty features separate the two cases.

    python3 -m tandem.demo ./workspace --questions 50
"""

from __future__ import annotations

import argparse
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .backend.base import Decoding, ModelSpec
from .config import Flags, Paths, RunConfig
from .core import DEFAULT_BUDGETS

VOCAB = [f"w{i:02d}" for i in range(30)]
SUBJECTS = ("Algebra", "Geometry")
# first correct stage -> share of questions; everything from that stage on is correct
DEFAULT_MIX = {0: 0.2, 1: 0.2, 3: 0.6}


@dataclass(frozen=True)
class DemoPaths:
    root: Path
    fixture: Path
    dataset: Path
    config: Path


def solve_patterns(n: int, mix: dict[int, float], stages: int, rng: np.random.Generator) -> list[tuple[int, ...]]:
    counts = {t: int(round(share * n)) for t, share in mix.items()}
    first = max(counts, key=counts.get)
    counts[first] += n - sum(counts.values())
    starts = [t for t, c in sorted(counts.items()) for _ in range(c)]
    rng.shuffle(starts)
    return [tuple(int(s >= t) for s in range(stages)) for t in starts]


def _answer(gold: int, correct: bool) -> str:
    value = gold if correct else gold + 1
    return f" The answer is \\boxed{{{value}}}"


def build_fixture(
    n: int = 50,
    seed: int = 0,
    mix: dict[int, float] | None = None,
    budgets: Sequence[int] = DEFAULT_BUDGETS,
    patterns: Sequence[tuple[int, ...]] | None = None,
) -> tuple[dict, list[dict]]:
    """Return ``(fixture, dataset_rows)``."""
    rng = np.random.default_rng(seed)
    stages = len(budgets) + 1
    if patterns is None:
        patterns = solve_patterns(n, mix or DEFAULT_MIX, stages, rng)
    entries: list[dict] = []
    rows: list[dict] = []
    for i, pattern in enumerate(patterns):
        qid = f"q{i:03d}"
        a, b = (int(x) for x in rng.integers(2, 500, size=2))
        gold = a + b
        rows.append({"id": qid, "text": f"What is {a} + {b}?", "gold": str(gold), "subject": SUBJECTS[i % len(SUBJECTS)]})
        stream_len = int(rng.integers(budgets[-1] // 2, budgets[-1] + budgets[-1] // 2))
        words = rng.choice(VOCAB, size=stream_len)
        entries.append({"question_id": qid, "operation": "insights", "tokens": [" " + w for w in words]})
        for t, ok in enumerate(pattern):
            if ok:
                score = {"profile": "peaked", "peak": round(float(rng.uniform(0.85, 0.97)), 4)}
            else:
                score = {"profile": "dirichlet", "alpha": 2.0, "seed": int(rng.integers(0, 2**31))}
            entries.append({"question_id": qid, "operation": "score", "stage": t, **score})
            entries.append({
                "question_id": qid,
                "operation": "answer",
                "stage": t,
                "text": _answer(gold, bool(ok)),
                "pad_to": int(rng.integers(30, 120)),
            })
        entries.append({
            "question_id": qid, "operation": "mentor_answer", "text": _answer(gold, True),
            "pad_to": int(rng.integers(300, 600)),
        })
        entries.append({"question_id": qid, "operation": "reasoning", "text": " Let me think.", "pad_to": 2000})
    return {"vocab": VOCAB, "top_k": 20, "entries": entries}, rows


def demo_config(root: Path, fixture_name: str = "fixture.json", budgets: Sequence[int] = DEFAULT_BUDGETS) -> RunConfig:
    endpoint = f"mock:{fixture_name}"
    return RunConfig(
        mentor=ModelSpec("mock-mentor-32b", "mentor", 32_000_000_000, endpoint, 0.0012, 0.0012, Decoding()),
        intern=ModelSpec("mock-intern-7b", "intern", 7_000_000_000, endpoint, 0.0002, 0.0002, Decoding()),
        budgets=tuple(budgets),
        # the tiny desk-scale dataset needs a larger step size and more epochs than the defaults
        classifier={"learning_rate": 0.01, "max_epochs": 30, "patience": 5},
        flags=Flags(allow_stage0_exit=False, all_stage_recording=True, top_k=20),
        grader="boxed_math",
        dataset_format="custom",
        paths=Paths(
            dataset="dataset.jsonl",
            traces="traces.jsonl",
            model_file="model.json",
            report_dir="report",
            results="results.jsonl",
        ),
        base_dir=root,
    )


def write_demo(root: str | Path, n: int = 50, seed: int = 0, mix: dict[int, float] | None = None) -> DemoPaths:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    fixture, rows = build_fixture(n, seed, mix)
    paths = DemoPaths(root, root / "fixture.json", root / "dataset.jsonl", root / "config.toml")
    paths.fixture.write_text(json.dumps(fixture), encoding="utf-8")
    paths.dataset.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    demo_config(root).save(paths.config)
    return paths


def main(argv: Sequence[str] | None = None) -> None:
    parser = argparse.ArgumentParser(prog="python3 -m tandem.demo", description=__doc__.splitlines()[0])
    parser.add_argument("directory")
    parser.add_argument("--questions", type=int, default=50)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    paths = write_demo(args.directory, args.questions, args.seed)
    print(f"wrote {paths.config}")


if __name__ == "__main__":
    main()
