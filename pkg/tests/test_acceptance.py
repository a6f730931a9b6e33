"""Acceptance suite: one PASS/FAIL line per criterion.

Run under pytest (lines are printed live) or directly with
``python3 tests/test_acceptance.py``.
"""

import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import oracles  # noqa: E402
from conftest import ScriptedModel, question, scripted_fixture  # noqa: E402
from tandem.backend import MockBackend, ModelSpec, TokenScore, backend_for  # noqa: E402
from tandem.cascade import Policy, collect_all_stages, compute_cost, run_episode  # noqa: E402
from tandem.classifier import (  # noqa: E402
    SufficiencyClassifier,
    ThresholdSet,
    loss_and_grads,
    init_params,
    threshold_grid,
    train_bank,
    tune_bank,
    tune_thresholds,
)
from tandem.config import RunConfig  # noqa: E402
from tandem.demo import write_demo  # noqa: E402
from tandem.harness import build_training_set, evaluate, load_dataset, make_grader, routing_analysis  # noqa: E402
from tandem.harness.report import REFERENCE  # noqa: E402
from tandem.traces import TraceWriter, build_record, read_traces, replay  # noqa: E402
from tandem.uncertainty import extract_features, per_token_ppl, token_entropy  # noqa: E402

_capture = None


@pytest.fixture(autouse=True)
def _live_output(pytestconfig):
    global _capture
    _capture = pytestconfig.pluginmanager.getplugin("capturemanager")
    yield
    _capture = None


def report(n, title, ok, detail=""):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {title}" + (f" ({detail})" if detail else "")
    if _capture is not None:
        with _capture.global_and_fixture_disabled():
            print("\n" + line)
    else:
        print(line)
    assert ok, line


# -- 1 ----------------------------------------------------------------------------


def test_criterion_1_cost_formula():
    t0 = time.perf_counter()
    single7 = compute_cost(0, 2732, 0, 7_000_000_000)
    single32 = compute_cost(0, 2630, 0, 32_000_000_000)
    # collaboration rows: the reported length is the intern's total, mentor insights included
    rows = [
        (compute_cost(L_L, total - L_L, 32_000_000_000, 7_000_000_000), want)
        for L_L, total, want in ((100, 2735, 44.76), (500, 2853, 71.96), (1000, 2930, 104.62))
    ]
    elapsed = time.perf_counter() - t0
    ok = (
        abs(single7 - 38.25) <= 0.01
        and abs(single32 - 168.35) / 168.35 <= 1e-3
        and all(abs(got - want) / want <= 0.01 for got, want in rows)
        and elapsed < 1.0
    )
    detail = f"7B {single7:.3f}, 32B {single32:.2f}, collab " + "/".join(f"{g:.2f}" for g, _ in rows)
    report(1, "cost-formula reproduction", ok, detail)


# -- 2 ----------------------------------------------------------------------------


def _random_sequence(rng):
    n = int(rng.integers(1, 80))
    out = []
    for _ in range(n):
        k = int(rng.integers(1, 21))
        p = rng.dirichlet(np.full(k + 1, float(rng.uniform(0.2, 3.0))))
        top, residual = p[:k], float(p[k])
        out.append(TokenScore("t", float(np.log(top[int(rng.integers(k))])),
                              tuple((str(i), float(np.log(v))) for i, v in enumerate(top)), residual))
    return out


def test_criterion_2_feature_oracle():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        seq = _random_sequence(rng)
        n = len(seq) + 1
        got = extract_features(seq).to_array()
        want = oracles.features(
            [s.realized_logprob for s in seq],
            [[math.exp(lp) for _, lp in s.top_alternatives] for s in seq],
            [s.residual_mass for s in seq],
            n,
        )
        want = np.asarray(want)
        # within 1e-9 relative to the operand scale: each statistic's own magnitude, and for
        # the two trend columns the largest series value (a difference of window means)
        scale = np.maximum(1.0, np.abs(want))
        scale[14], scale[15] = max(1.0, want[3]), max(1.0, want[10])
        worst = max(worst, float(np.max(np.abs(got - want) / scale)))
    elapsed = time.perf_counter() - t0
    report(2, "feature oracle equivalence", worst <= 1e-9 and elapsed < 10,
           f"max scaled diff {worst:.1e}, {elapsed:.2f}s")


# -- 3 ----------------------------------------------------------------------------


def test_criterion_3_entropy_ppl():
    uniform = TokenScore("x", -math.log(4), tuple((f"a{i}", math.log(0.25)) for i in range(4)), 0.0)
    onehot = TokenScore("x", 0.0, (("a", 0.0),), 0.0)
    checks = [
        abs(token_entropy(uniform) - math.log(4)) <= 1e-12,
        token_entropy(onehot) == 0.0,
        per_token_ppl([TokenScore("x", 0.0, (), 1.0)]) == [1.0],
        per_token_ppl([TokenScore("x", -math.log(2), (), 0.5)]) == [2.0],
    ]
    report(3, "entropy/PPL analytic checks", all(checks), f"{sum(checks)}/4 exact")


# -- 4 ----------------------------------------------------------------------------


def test_criterion_4_mlp():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(5):
        weights, biases = init_params([17, 64, 32, 1], rng)
        X = rng.normal(size=(1, 17))
        y = rng.integers(0, 2, 1).astype(float)
        _, gw, gb = loss_and_grads(weights, biases, X, y)
        params, grads = weights + biases, gw + gb
        for _ in range(10):
            i = int(rng.integers(len(params)))
            idx = tuple(int(rng.integers(s)) for s in params[i].shape)
            old = params[i][idx]
            params[i][idx] = old + 1e-5
            up = loss_and_grads(weights, biases, X, y)[0]
            params[i][idx] = old - 1e-5
            down = loss_and_grads(weights, biases, X, y)[0]
            params[i][idx] = old
            num, ana = (up - down) / 2e-5, grads[i][idx]
            worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-8))
    yb = rng.integers(0, 2, 1000)
    Xb = rng.normal(size=(1000, 17)) + np.where(yb[:, None] == 1, 1.5, -1.5)
    clf = SufficiencyClassifier(learning_rate=1e-2, max_epochs=3).fit(Xb, yb)
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and clf.best_val_accuracy_ >= 0.95 and len(clf.history_) <= 3 and elapsed < 30
    report(4, "MLP gradient check and blob training", ok,
           f"max rel err {worst:.1e}, val acc {clf.best_val_accuracy_:.3f} in {len(clf.history_)} epochs")


# -- 5 ----------------------------------------------------------------------------


def test_criterion_5_threshold_oracle():
    rng = np.random.default_rng(5)
    grid = oracles.grid()
    mismatches = 0
    for _ in range(200):
        n = int(rng.integers(1, 60))
        # mix continuous scores with exact grid values to exercise ties
        s = np.where(rng.random(n) < 0.3, rng.choice(grid, n), rng.random(n))
        pairs = [(float(a), int(b)) for a, b in zip(s, rng.integers(0, 2, n))]
        tau = tune_thresholds({0: pairs})[0]
        if tau != oracles.best_threshold(pairs, grid) or tau not in threshold_grid():
            mismatches += 1
    report(5, "threshold tuner oracle", mismatches == 0, f"{200 - mismatches}/200 agree")


# -- 6 ----------------------------------------------------------------------------

MENTOR = ModelSpec("m", "mentor", 32_000_000_000, "mock:", 0.001, 0.002)
INTERN = ModelSpec("i", "intern", 7_000_000_000, "mock:", 0.001, 0.001)
MODELS = (MENTOR, INTERN)


def _episode(scores, tau, policy="tandem", qid="q1"):
    b = MockBackend(scripted_fixture(qids=(qid,)))
    model = ScriptedModel(scores, ThresholdSet.constant(tau)) if scores is not None else None
    res, _ = run_episode(question(qid), Policy.parse(policy), MODELS, (b, b), model, grader=make_grader())
    return res, b


def test_criterion_6_state_machine():
    t0 = time.perf_counter()
    res, b = _episode([0.1, 0.2, 0.9, 0.99], 0.5)
    a = (res.selected_stage == 2 and res.cost.mentor_tokens == 500
         and [c[2] for c in b.calls if c[1] == "insights"] == [1, 2] and 3 not in [r.stage for r in res.stages])
    res, _ = _episode([0.3, 0.1, 0.2, 0.25], 0.95)
    r2, _ = _episode([0.1, 0.4, 0.4, 0.2], 0.95)
    bb = res.fallback_used and res.selected_stage == 0 and r2.selected_stage == 1
    rng = np.random.default_rng(6)
    c = all(
        r.fallback_used and r.selected_stage == int(np.argmax(s))
        for s in (rng.uniform(0, 0.95, 4).tolist() for _ in range(50))
        for r in [_episode(s, 0.95)[0]]
    )
    res, b = _episode(None, 0.5, "fixed:0")
    d = b.mentor_calls() == [] and res.cost.mentor_tokens == 0
    elapsed = time.perf_counter() - t0
    report(6, "cascade state machine on mock backend", a and bb and c and d and elapsed < 5,
           f"a={a} b={bb} c={c} d={d}, {elapsed:.2f}s")


# -- 7 / 9 share a trained demo workspace --------------------------------------------


@pytest.fixture(scope="module")
def demo(tmp_path_factory):
    root = tmp_path_factory.mktemp("accept")
    paths = write_demo(root, n=50, seed=11)
    cfg = RunConfig.load(paths.config)
    qs = load_dataset(cfg.path("dataset"), "custom")
    grader = make_grader(cfg.grader)
    ccfg = cfg.cascade_config()

    def backends():
        return tuple(backend_for(m, cfg.base_dir, cfg.flags.top_k) for m in cfg.models)

    bs = backends()
    bootstrap = [build_record(collect_all_stages(q, cfg.models, bs, ccfg, grader), cfg.models, all_stages=True)
                 for q in qs]
    examples = build_training_set(bootstrap)
    bank = train_bank(examples, cfg.grouping, **cfg.classifier_params())
    tune_bank(bank, examples)
    return dict(cfg=cfg, qs=qs, grader=grader, ccfg=ccfg, backends=backends, bank=bank, records=bootstrap,
                examples=examples, root=root)


def test_criterion_7_replay_determinism(demo):
    cfg, bank, ccfg = demo["cfg"], demo["bank"], demo["ccfg"]
    bs = demo["backends"]()
    path = demo["root"] / "traces.jsonl"
    with TraceWriter(path) as w:
        for q in demo["qs"]:
            src = collect_all_stages(q, cfg.models, bs, ccfg, demo["grader"], bank)
            w.write(build_record(src, cfg.models, all_stages=True))
    records = read_traces(path)
    live_bs = demo["backends"]()
    live = [run_episode(q, Policy("tandem"), cfg.models, live_bs, bank, ccfg, demo["grader"])[0] for q in demo["qs"]]
    replayed = replay(records, bank, Policy("tandem"))
    decisions = costs = 0
    worst = 0.0
    for rec, lv, rp in zip(records, live, replayed):
        for r in rp.stages:
            decisions += r.decision == rec.stage(r.stage).decision
            worst = max(worst, abs(r.score - rec.stage(r.stage).score))
        same_path = [(r.stage, r.decision) for r in rp.stages] == [(r.stage, r.decision) for r in lv.stages]
        costs += rp.cost == lv.cost and same_path
        for st in rec.stages:
            f = extract_features(st.token_scores, st.input_tokens).to_array()
            worst = max(worst, float(np.max(np.abs(f - st.features.to_array()))))
    total = sum(len(r.stages) for r in replayed)
    ok = len(records) == 50 and decisions == total and costs == 50 and worst <= 1e-9
    report(7, "trace replay determinism", ok,
           f"{decisions}/{total} decisions, {costs}/50 costs, max diff {worst:.1e}")


# -- 8 ----------------------------------------------------------------------------


def test_criterion_8_routing_partition():
    from tandem.backend import Usage
    from tandem.cascade import CostReport, EpisodeResult

    rng = np.random.default_rng(8)
    bad = 0
    for _ in range(1000):
        n = int(rng.integers(1, 30))
        grades = rng.integers(0, 2, size=(n, 4))
        sel = rng.integers(0, 4, size=n)
        eps = [EpisodeResult(str(i), Policy("tandem"), [], int(s), "", CostReport(0.0, 0, 0, 0.0, Usage(), Usage()),
                             correct=bool(g[s]), stage_grades=g.tolist()) for i, (s, g) in enumerate(zip(sel, grades))]
        tax = routing_analysis(eps)
        if tax.correct + tax.premature_stop + tax.late_stop + tax.unsolvable != n:
            bad += 1
    ref = REFERENCE["routing"]
    total = ref["correct"] + ref["premature_stop"] + ref["late_stop"] + ref["unsolvable"]
    incorrect = total - ref["correct"]
    share = 100 * (ref["premature_stop"] + ref["late_stop"]) / incorrect
    ok = bad == 0 and total == 5000 and incorrect == 827 and abs(share - 93.1) <= 0.1
    report(8, "routing-taxonomy partition", ok, f"{1000 - bad}/1000 partitions, reference {total}, {share:.2f}% misrouted")


# -- 9 ----------------------------------------------------------------------------


def test_criterion_9_end_to_end(demo):
    records, bank = demo["records"], demo["bank"]
    early = sum(1 for r in records if r.stages[1].grade == 1 and r.stages[3].grade == 1)
    late = sum(1 for r in records if r.stages[1].grade == 0 and r.stages[2].grade == 0 and r.stages[3].grade == 1)
    fit = np.mean([bank.for_subject(e.subject).score(e.features) > 0.5 for e in demo["examples"]]
                  == np.array([e.label == 1 for e in demo["examples"]]))
    out = {p: evaluate(replay(records, bank, Policy.parse(p)), by_subject=False) for p in ("tandem", "fixed:2", "fixed:3")}
    ok = (early == 20 and late == 30 and out["tandem"].accuracy >= out["fixed:2"].accuracy
          and out["tandem"].avg_cost_tflops < out["fixed:3"].avg_cost_tflops)
    detail = ", ".join(f"{p} {m.accuracy:.0f}% @ {m.avg_cost_tflops:.2f} TFLOPs" for p, m in out.items())
    report(9, "constructed end-to-end superiority", ok, f"{detail}; classifier train acc {fit:.2f}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
