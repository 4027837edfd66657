from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlel.metrics import BUDGET_MULTIPLIERS, bootstrap_ci, report_from_traces, summarize_outcomes
from nlel.runner import RunConfig, execute, load_world, run_instance
from nlel.trace import InstanceOutcome, dumps, dumps_trace, outcome_of, read_trace, replay, write_trace

CFG = RunConfig(seeds=(0, 1), instances=4)
WORLD = load_world(CFG)


@pytest.fixture(scope="module")
def traces():
    return [run_instance(CFG, WORLD, s, i).records for s in CFG.seeds for i in range(CFG.instances)]


def test_dumps_is_canonical():
    assert dumps({"b": 1, "a": [1.5, "é"]}) == '{"a":[1.5,"é"],"b":1}'
    with pytest.raises(ValueError):
        dumps({"x": float("nan")})


def test_trace_file_roundtrip(tmp_path, traces):
    path = tmp_path / "t.jsonl"
    write_trace(path, traces[0])
    assert read_trace(path) == json.loads(json.dumps(traces[0]))


def test_replay_at_run_limit_matches_recorded(traces):
    for t in traces:
        assert replay(t, t[0]["budget"]["token_limit"]) == outcome_of(t)


def test_replay_monotone_in_budget(traces):
    for t in traces:
        limit = t[0]["budget"]["token_limit"]
        steps = [replay(t, int(limit * f)) for f in (0.1, 0.25, 0.5, 0.75, 1.0)]
        tokens = [o.tokens_used for o in steps]
        assert tokens == sorted(tokens)
        assert [o.expansions for o in steps] == sorted(o.expansions for o in steps)


def test_replay_rejects_bad_traces(traces):
    with pytest.raises(ValueError):
        replay(traces[0][1:], 100)


def test_replay_beyond_budget_stop_refused(traces):
    stopped = [t for t in traces if t[-1]["reason"] == "token-budget"]
    for t in stopped:
        with pytest.raises(ValueError):
            replay(t, t[0]["budget"]["token_limit"] + 1)


@pytest.mark.parametrize("mult", [0.25, 0.5, 0.8])
def test_smaller_live_run_is_prefix_of_larger(mult):
    # replay equivalence rests on this: a capped run is a prefix of the uncapped one
    big = run_instance(CFG, WORLD, 0, 1)
    small_cfg = CFG.replace(token_limit=int(CFG.token_limit * mult))
    small = run_instance(small_cfg, WORLD, 0, 1)
    expands = [e for e in small.events if e["type"] == "expand"]
    assert expands == big.events[: len(expands)]
    assert all(e["type"] == "stop" for e in small.events[len(expands):])
    assert replay(big.records, small_cfg.run_budget.token_limit) == outcome_of(small.records)


def test_bootstrap_deterministic_and_ordered():
    values = np.random.default_rng(0).random(50)
    a = bootstrap_ci(values, seed=3, n_resamples=500)
    assert a == bootstrap_ci(values, seed=3, n_resamples=500)
    assert a != bootstrap_ci(values, seed=4, n_resamples=500)
    assert a[0] <= values.mean() <= a[1]


def test_bootstrap_rejects_empty():
    with pytest.raises(ValueError):
        bootstrap_ci([])


def test_summary_ratios():
    outs = [
        InstanceOutcome(0, 0, True, 100, 2, 4, 3, 1, "final-answer"),
        InstanceOutcome(1, 0, False, 300, 4, 8, 2, 6, "token-budget"),
    ]
    s = summarize_outcomes(outs)
    assert s["accuracy"] == 0.5
    assert s["tokens_per_success"] == 400
    assert s["verify_accept_rate"] == 5 / 12
    assert s["expansions_per_success"] == 6
    assert summarize_outcomes(outs[1:])["tokens_per_success"] is None


def test_success_at_compute_non_decreasing(traces):
    report = report_from_traces(traces, CFG.token_limit, (0.1, 0.25, 0.5, 1.0, 2.0), n_resamples=100)
    accs = list(report.success_at_compute.values())
    assert accs == sorted(accs)


@settings(max_examples=15)
@given(st.lists(st.floats(0.05, 2.0), min_size=1, max_size=4, unique=True))
def test_nested_budgets_non_decreasing_property(mults):
    traces = [run_instance(CFG, WORLD, 0, i).records for i in range(2)]
    ordered = sorted(mults)
    report = report_from_traces(traces, CFG.token_limit, ordered, n_resamples=20)
    accs = list(report.success_at_compute.values())
    assert accs == sorted(accs)


def test_report_keys(traces):
    doc = report_from_traces(traces, CFG.token_limit, BUDGET_MULTIPLIERS, n_resamples=50).to_dict()
    assert set(doc["success_at_compute"]) == {"0.5x", "1.0x", "2.0x"}
    assert doc["per_budget"]["1.0x"]["token_limit"] == CFG.token_limit
    assert len(doc["per_budget"]["1.0x"]["accuracy_ci"]) == 2


def test_dumps_trace_lines(traces):
    text = dumps_trace(traces[0])
    assert text.count("\n") == len(traces[0])
    assert execute(CFG.replace(instances=1, seeds=[0]), write=False).files["report.json"]
