import gzip
import json
import threading

import jsonschema
import numpy as np
import pytest

from tandem.backend import MockBackend
from tandem.cascade import Policy, collect_all_stages, run_episode
from tandem.classifier import ThresholdSet
from tandem.errors import MissingStageDataError, TraceSchemaError
from tandem.harness import make_grader
from tandem.traces import (
    TraceRecord,
    TraceWriter,
    build_record,
    episode_from_dict,
    episode_to_dict,
    read_results,
    read_traces,
    replay,
    schema_document,
    write_results,
)
from tandem.uncertainty import extract_features

from conftest import ScriptedModel, question, scripted_fixture

GRADER = make_grader("boxed_math")


class StaticModel:
    """Deterministic stand-in classifier: a logistic function of mean entropy."""

    def __init__(self, tau):
        self.thresholds = ThresholdSet.constant(tau)

    def score(self, f):
        return float(1 / (1 + np.exp(-(f.entropy.mean - 1.0))))

    def for_subject(self, subject):
        return self


def _all_stage_record(models, qid="q1", correct=None, clf=None, stream_len=1200):
    b = MockBackend(scripted_fixture(qids=(qid,), correct=correct, stream_len=stream_len))
    source = collect_all_stages(question(qid), models, (b, b), grader=GRADER, clf=clf, baselines=[Policy.parse("single:mentor")])
    return build_record(source, models, all_stages=True)


def test_record_roundtrip_and_schema(models, tmp_path):
    rec = _all_stage_record(models)
    path = tmp_path / "t.jsonl"
    with TraceWriter(path) as w:
        w.write(rec)
    line = path.read_text().splitlines()[0]
    jsonschema.validate(json.loads(line), schema_document())
    (back,) = read_traces(path)
    assert back.to_dict() == rec.to_dict()
    for st in back.stages:
        f = extract_features(st.token_scores, st.input_tokens)
        np.testing.assert_allclose(f.to_array(), st.features.to_array(), rtol=0, atol=1e-9)


def test_gzip_variant(models, tmp_path):
    rec = _all_stage_record(models)
    path = tmp_path / "t.jsonl.gz"
    with TraceWriter(path) as w:
        w.write(rec)
    with TraceWriter(path) as w:
        w.write(rec)
    assert len(gzip.decompress(path.read_bytes()).splitlines()) == 2
    assert [r.to_dict() for r in read_traces(path)] == [rec.to_dict()] * 2


def test_concurrent_writers(models, tmp_path):
    small = _all_stage_record(models, stream_len=20).to_dict()
    path = tmp_path / "t.jsonl"
    writers = [TraceWriter(path), TraceWriter(path)]

    def work(w, k):
        for i in range(50):
            w.write({**small, "recorded_at": f"{k}-{i}"})

    threads = [threading.Thread(target=work, args=(w, k)) for k, w in enumerate(writers) for _ in range(2)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for w in writers:
        w.close()
    lines = path.read_text().splitlines()
    assert len(lines) == 200
    assert all(json.loads(line)["schema_version"] == 1 for line in lines)


def test_schema_version_gate(models, tmp_path):
    d = _all_stage_record(models).to_dict()
    path = tmp_path / "t.jsonl"
    path.write_text(json.dumps(d) + "\n" + json.dumps({**d, "schema_version": 2}) + "\n")
    with pytest.raises(TraceSchemaError, match=":2:"):
        read_traces(path)


def test_stage_order_enforced(models):
    d = _all_stage_record(models).to_dict()
    d["stages"] = d["stages"][::-1]
    with pytest.raises(TraceSchemaError):
        TraceRecord.from_dict(d)


def test_replay_same_classifier_same_decisions(models):
    clf = StaticModel(0.5)
    rec = _all_stage_record(models, clf=clf)
    (res,) = replay([rec], clf, Policy("tandem"))
    for r in res.stages:
        assert r.decision == rec.stage(r.stage).decision
        assert r.score == rec.stage(r.stage).score


def test_replay_forced_fallback(models):
    recs = [_all_stage_record(models, qid=f"q{i}") for i in range(3)]
    clf = ScriptedModelFactory([0.3, 0.1, 0.2, 0.25])
    out = replay(recs, clf, Policy("tandem"))
    assert all(r.fallback_used and r.selected_stage == 0 for r in out)


class ScriptedModelFactory:
    """Fresh scripted scores for each replayed record."""

    def __init__(self, scores):
        self.scores = scores
        self.thresholds = ThresholdSet.constant(0.95)

    def for_subject(self, subject):
        return ScriptedModel(self.scores, self.thresholds)


def test_replay_fixed_stage_and_grades(models):
    rec = _all_stage_record(models, correct={"q1": (0, 1, 0, 1)})
    (res,) = replay([rec], None, Policy.parse("fixed:3"))
    assert res.selected_stage == 3 and res.correct is True
    assert res.stage_grades == [0, 1, 0, 1]
    (res,) = replay([rec], None, Policy.parse("fixed:2"))
    assert res.correct is False
    (res,) = replay([rec], None, Policy.parse("single:mentor"))
    assert res.correct is True


def test_replay_cost_matches_live(models):
    b = MockBackend(scripted_fixture())
    model = ScriptedModel([0.1, 0.2, 0.9], ThresholdSet.constant(0.5))
    live, source = run_episode(question(), Policy("tandem"), models, (b, b), model, grader=GRADER)
    rec = build_record(source, models, live)
    assert rec.episode is live
    (again,) = replay([rec], ScriptedModel([0.1, 0.2, 0.9], ThresholdSet.constant(0.5)), Policy("tandem"))
    assert again.cost == live.cost
    assert again.selected_stage == live.selected_stage


def test_replay_missing_stage_data(models):
    b = MockBackend(scripted_fixture())
    live, source = run_episode(question(), Policy.parse("fixed:1"), models, (b, b), grader=GRADER)
    rec = build_record(source, models, live)
    with pytest.raises(MissingStageDataError):
        replay([rec], None, Policy.parse("fixed:3"))
    with pytest.raises(MissingStageDataError):
        replay([rec], None, Policy.parse("budget:100"))


def test_replay_is_deterministic(models):
    recs = [_all_stage_record(models, qid=f"q{i}") for i in range(3)]
    clf = StaticModel(0.6)
    a = [episode_to_dict(r) for r in replay(recs, clf, Policy("tandem"))]
    b = [episode_to_dict(r) for r in replay(recs, clf, Policy("tandem"))]
    assert a == b


def test_results_roundtrip(models, tmp_path):
    recs = [_all_stage_record(models, qid=f"q{i}") for i in range(2)]
    out = replay(recs, StaticModel(1.0), Policy("tandem"))
    path = tmp_path / "r.jsonl"
    write_results(path, out)
    back = read_results(path)
    assert [episode_to_dict(r) for r in back] == [episode_to_dict(r) for r in out]
    assert episode_to_dict(episode_from_dict(episode_to_dict(out[0]))) == episode_to_dict(out[0])
