from __future__ import annotations

import pytest

from tandem.backend import Decoding, MockBackend, ModelSpec
from tandem.classifier import ThresholdSet
from tandem.core import Question

VOCAB = [f"v{i}" for i in range(8)]


@pytest.fixture
def mentor():
    return ModelSpec("mentor-32b", "mentor", 32_000_000_000, "mock:inline", 0.001, 0.002)


@pytest.fixture
def intern():
    return ModelSpec("intern-7b", "intern", 7_000_000_000, "mock:inline", 0.0001, 0.0002, Decoding())


@pytest.fixture
def models(mentor, intern):
    return mentor, intern


def question(qid="q1", subject="Algebra", gold="4"):
    return Question(qid, f"What is 2 + 2 ? ({qid})", gold, subject)


def scripted_fixture(qids=("q1",), stream_len=1200, correct=None, profiles=None, answer_len=10):
    """Fixture with one long insight stream per question.

    ``correct[qid][t]`` chooses a right or wrong boxed answer for stage ``t``;
    ``profiles[qid][t]`` overrides the score entry.
    """
    entries = []
    for qid in qids:
        entries.append({"question_id": qid, "operation": "insights", "tokens": [f" m{i % 7}" for i in range(stream_len)]})
        for t in range(4):
            ok = (correct or {}).get(qid, (1, 1, 1, 1))[t]
            prof = (profiles or {}).get(qid, {}).get(t, {"profile": "peaked", "peak": 0.6 + 0.1 * t})
            entries.append({"question_id": qid, "operation": "score", "stage": t, **prof})
            entries.append({
                "question_id": qid, "operation": "answer", "stage": t,
                "text": " \\boxed{4}" if ok else " \\boxed{5}", "pad_to": answer_len + t,
            })
        entries.append({"question_id": qid, "operation": "mentor_answer", "text": " \\boxed{4}", "pad_to": 300})
        entries.append({"question_id": qid, "operation": "reasoning", "text": " hmm", "pad_to": 2000})
    return {"vocab": VOCAB, "entries": entries}


@pytest.fixture
def backend():
    return MockBackend(scripted_fixture())


class ScriptedModel:
    """Stands in for a trained model; the i-th call to ``score`` returns ``scores[i]``.

    The cascade judges stages in ascending order, so within one episode
    ``scores[t]`` is the stage-``t`` sufficiency score.
    """

    def __init__(self, scores, thresholds: ThresholdSet):
        self.scores = list(scores)
        self.thresholds = thresholds
        self.calls = 0

    def score(self, f):
        s = self.scores[self.calls]
        self.calls += 1
        return s

    def for_subject(self, subject):
        return self
