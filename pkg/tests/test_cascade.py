import pytest
from hypothesis import given, strategies as st

import oracles
from tandem.backend import MockBackend, ModelSpec, Usage
from tandem.cascade import (
    CascadeConfig,
    Policy,
    collect_all_stages,
    compute_cost,
    compute_dollar_cost,
    fallback_select,
    run_episode,
)
from tandem.classifier import ThresholdSet
from tandem.errors import BackendError, ClassifierMissingError, MissingPriceError
from tandem.harness import make_grader

from conftest import ScriptedModel, question, scripted_fixture

GRADER = make_grader("boxed_math")


def _run(policy, models, backend, scores=None, tau=0.5, cfg=None, router=None, q=None):
    model = None
    if scores is not None:
        th = ThresholdSet.constant(tau)
        th.router = router
        model = ScriptedModel(scores, th)
    return run_episode(q or question(), Policy.parse(policy), models, (backend, backend), model, cfg, GRADER)


def insight_calls(backend):
    return [c[2] for c in backend.calls if c[1] == "insights"]


def test_policy_parse_roundtrip():
    for text in ("tandem", "fixed:2", "router", "single:mentor", "single:intern", "budget:500"):
        assert str(Policy.parse(text)) == text
    for bad in ("fixed", "single:boss", "budget:-1", "nope", "tandem:3"):
        with pytest.raises(ValueError):
            Policy.parse(bad)


def test_tandem_stops_at_stage_two(models, backend):
    res, _ = _run("tandem", models, backend, scores=[0.1, 0.2, 0.9, 0.99])
    assert res.selected_stage == 2 and not res.fallback_used
    assert res.cost.mentor_tokens == 500
    assert insight_calls(backend) == [1, 2]
    assert [r.stage for r in res.stages] == [0, 1, 2]
    assert not res.stages[0].judged and res.stages[1].judged
    answer_tokens = res.cost.intern_generated_tokens
    assert answer_tokens == 12
    assert res.cost.tflops == compute_cost(500, answer_tokens, models[0].param_count, models[1].param_count)
    assert res.correct is True


def test_tandem_fallback_argmax(models, backend):
    res, _ = _run("tandem", models, backend, scores=[0.30, 0.10, 0.20, 0.25], tau=0.95)
    assert res.fallback_used and res.selected_stage == 0
    assert all(r.decision == 0 for r in res.stages[1:])
    # every stage was visited, so the full mentor bill stands
    assert res.cost.mentor_tokens == 1000
    assert [c[2] for c in backend.calls if c[1] == "answer"] == [0]


def test_fallback_select_ties_to_smallest():
    assert fallback_select([0.3, 0.1, 0.2, 0.25]) == 0
    assert fallback_select([0.1, 0.4, 0.4, 0.2]) == 1
    assert fallback_select([0.2, 0.2, 0.2, 0.2]) == 0
    assert fallback_select([0.1, 0.2, 0.3, 0.9]) == 3


def test_fixed_stage_zero_has_no_mentor_calls(models, backend):
    res, _ = _run("fixed:0", models, backend)
    assert backend.mentor_calls() == []
    assert res.cost.mentor_tokens == 0 and res.selected_stage == 0
    assert res.cost.tflops == compute_cost(0, res.cost.intern_generated_tokens, 32_000_000_000, 7_000_000_000)


def test_fixed_stage_three(models, backend):
    res, _ = _run("fixed:3", models, backend)
    assert res.cost.mentor_tokens == 1000 and insight_calls(backend) == [1, 2, 3]
    assert [c[1] for c in backend.calls].count("score") == 0


def test_fixed_stage_out_of_range(models, backend):
    with pytest.raises(ValueError):
        _run("fixed:4", models, backend)


def test_single_models(models, backend):
    res, _ = _run("single:intern", models, backend)
    assert backend.mentor_calls() == [] and res.cost.mentor_tokens == 0
    res, _ = _run("single:mentor", models, backend)
    assert res.cost.tflops == compute_cost(0, 300, 0, models[0].param_count)
    assert res.cost.mentor_tokens == 300


def test_budget_forcing_bills_mentor(models, backend):
    res, _ = _run("budget:500", models, backend)
    # 500 reasoning tokens plus the 300-token answer, all from the mentor
    assert res.cost.mentor_tokens == 800
    assert res.cost.tflops == compute_cost(0, 800, 0, models[0].param_count)


def test_router(models, backend):
    res, _ = _run("router", models, backend, scores=[0.9], router=0.5)
    assert res.selected_stage == 0 and backend.mentor_calls() == []
    b2 = MockBackend(scripted_fixture())
    res, _ = _run("router", models, b2, scores=[0.2], router=0.5)
    assert res.selected_stage == 3 and insight_calls(b2) == [1, 2, 3]
    assert [c[2] for c in b2.calls if c[1] == "score"] == [0]


def test_stage0_exit_flag(models, backend):
    cfg = CascadeConfig(allow_stage0_exit=True)
    res, _ = _run("tandem", models, backend, scores=[0.9], cfg=cfg)
    assert res.selected_stage == 0 and backend.mentor_calls() == []
    b2 = MockBackend(scripted_fixture())
    res, _ = _run("tandem", models, b2, scores=[0.9, 0.9])
    assert res.selected_stage == 1


def test_zero_thresholds_degenerate_to_stage_one(models, backend):
    res, _ = _run("tandem", models, backend, scores=[0.4, 0.01, 0.9, 0.9], tau=0.0)
    assert res.selected_stage == 1 and res.cost.mentor_tokens == 100


def test_short_stream_is_not_extended(models):
    b = MockBackend(scripted_fixture(stream_len=300))
    res, source = _run("fixed:3", models, b)
    assert res.cost.mentor_tokens == 300
    # the stream ended inside stage 2; stage 3 triggers no further mentor request
    assert insight_calls(b) == [1, 2]
    assert source.store[3].mentor_tokens == 300


def test_monotone_mentor_bill(models, backend):
    res, _ = _run("tandem", models, backend, scores=[0.1, 0.1, 0.1, 0.1], tau=0.9)
    bills = [r.mentor_tokens_cumulative for r in res.stages]
    assert bills == sorted(bills)


def test_missing_classifier(models, backend):
    with pytest.raises(ClassifierMissingError):
        run_episode(question(), Policy("tandem"), models, (backend, backend), None)
    untuned = ScriptedModel([0.1], None)
    with pytest.raises(ClassifierMissingError):
        run_episode(question(), Policy("tandem"), models, (backend, backend), untuned)


def test_backend_error_carries_partial(models):
    fx = scripted_fixture()
    fx["entries"] = [e for e in fx["entries"] if not (e["operation"] == "score" and e.get("stage") == 2)]
    b = MockBackend(fx)
    with pytest.raises(BackendError) as info:
        _run("tandem", models, b, scores=[0.1, 0.1, 0.1, 0.1], tau=0.9)
    partial = info.value.partial
    assert partial.store[1].token_scores is not None and partial.store[2].token_scores is None


def test_usage_accounting(models, backend):
    res, source = _run("tandem", models, backend, scores=[0.1, 0.9])
    st1 = source.store[1]
    assert res.cost.mentor_usage == st1.mentor_usage
    expected_intern = Usage(source.store[0].score_prompt_tokens + st1.score_prompt_tokens, 0) + st1.answer_usage
    assert res.cost.intern_usage == expected_intern
    assert res.cost.dollars == pytest.approx(compute_dollar_cost([(models[0], res.cost.mentor_usage), (models[1], expected_intern)]))


def test_collect_all_stages(models, backend):
    correct = {"q1": (0, 0, 1, 1)}
    b = MockBackend(scripted_fixture(correct=correct))
    model = ScriptedModel([0.1, 0.2, 0.7, 0.8], ThresholdSet.constant(0.5))
    source = collect_all_stages(question(), models, (b, b), grader=GRADER, clf=model, baselines=[Policy.parse("budget:100")])
    assert [source.store[t].grade for t in range(4)] == [0, 0, 1, 1]
    assert [source.store[t].decision for t in range(4)] == [0, 0, 1, 1]
    assert source.baselines["budget:100"].reasoning_tokens == 100


def test_cost_examples():
    assert compute_cost(0, 2732, 0, 7_000_000_000) == pytest.approx(38.248)
    assert compute_cost(500, 100, 32_000_000_000, 7_000_000_000) == pytest.approx(2 * (32e9 * 500 + 7e9 * 600) / 1e12)
    with pytest.raises(ValueError):
        compute_cost(-1, 0, 1, 1)


@given(st.integers(0, 10**5), st.integers(0, 10**5), st.integers(1, 10**12), st.integers(1, 10**12))
def test_cost_matches_exact_arithmetic(L_L, L_S, tL, tS):
    assert compute_cost(L_L, L_S, tL, tS) == float(oracles.cost_tflops_exact(L_L, L_S, tL, tS))


def test_dollar_cost():
    a = ModelSpec("a", "mentor", 1, "x", 0.5, 1.5)
    b = ModelSpec("b", "intern", 1, "x", 0.1, None)
    assert compute_dollar_cost([(a, Usage(1000, 2000)), (b, Usage(500, 0))]) == pytest.approx(0.5 + 3.0 + 0.05)
    with pytest.raises(MissingPriceError):
        compute_dollar_cost([(b, Usage(0, 10))])
    assert compute_dollar_cost([]) == 0.0
