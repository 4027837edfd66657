from __future__ import annotations

import itertools

import pytest
from hypothesis import given
from hypothesis import strategies as st

from nlel.adapter import MockBackend, Usage
from nlel.baseline import cot_controls, tot_controls
from nlel.policies import BackendLabeller, ConstantLabeller, Label, TunerResult, constant_tuner
from nlel.search import (
    BackendGenerator,
    EngineConfig,
    RunBudget,
    SearchEngine,
    anneal_beta,
    beta_paths,
    check_tree,
    expansion_bound,
    score,
    select_topk,
    total_compute_envelope,
)
from nlel.synthetic import Bundle, Draft

ACCEPT = lambda cand, i, cfg: (True, "ok")  # noqa: E731


class ScriptedGenerator:
    """Bundles of fixed-score drafts; mu rises with depth so deeper is better."""

    def __init__(self, tokens_per_draft: int = 5):
        self.tokens_per_draft = tokens_per_draft
        self.calls = 0

    def root(self, instance):
        return f"root-{instance}"

    def candidate_cost(self, pi):
        return 10.0

    def describe(self):
        return {"kind": "scripted"}

    def gen_bundle(self, parent_text, depth, label, pi, count, state_seed, retrieved=()):
        self.calls += 1
        drafts = tuple(
            Draft(f"{parent_text}/{label.text}/{j}", 0.1 * (depth + 1) + 0.01 * j, 0.05, correct=True) for j in range(count)
        )
        return Bundle(drafts, (Usage("generator", 0, self.tokens_per_draft * count, "scripted"),))


class CountingTuner:
    def __init__(self, pi):
        self.pi = pi
        self.calls = 0

    def propose(self, parent_text, label, context):
        self.calls += 1
        return TunerResult(self.pi)


# -- scoring and selection --------------------------------------------------


def test_score_examples():
    assert score(0.7, 0.2, 0.1) == pytest.approx(0.72)
    assert score(0.4, 0.9, 0.0) == 0.4
    assert score(0.4, 0.0, 0.8) == 0.4


def test_anneal_examples():
    assert anneal_beta(0.3, 0, 0.2) == 0.3
    assert anneal_beta(0.3, 2, 0.5) == pytest.approx(0.075)
    assert {anneal_beta(0.3, d, 1.0) for d in range(6)} == {0.3}


@given(st.floats(0, 1), st.integers(0, 20), st.floats(0.01, 1.0))
def test_anneal_non_increasing(beta0, depth, gamma):
    assert anneal_beta(beta0, depth + 1, gamma) <= anneal_beta(beta0, depth, gamma)


def test_superset_cannot_lower_best():
    pool = [(1, 0.5, 0.0), (2, 0.6, 0.0)]
    assert select_topk(pool, 1, 0.0)[0][1] == 0.6
    assert select_topk(pool + [(3, 0.55, 0.0)], 1, 0.0)[0][1] == 0.6


def test_small_pool_fully_retained_in_order():
    pool = [(1, 0.2, 0.0), (2, 0.9, 0.0), (3, 0.5, 0.0)]
    assert [c[0] for c in select_topk(pool, 5, 0.3)] == [2, 3, 1]


def test_tie_goes_to_lower_id():
    assert [c[0] for c in select_topk([(7, 0.5, 0.0), (3, 0.5, 0.0)], 1, 0.2)] == [3]


candidate = st.tuples(st.floats(-1, 1), st.floats(0, 1))


@given(st.lists(candidate, max_size=10), st.lists(candidate, max_size=6), st.integers(1, 6), st.floats(0, 1))
def test_topk_order_statistics_monotone(base, extra, k, beta):
    pool = [(i, mu, s) for i, (mu, s) in enumerate(base + extra)]
    sub = [score(m, s, beta) for _, m, s in select_topk(pool[: len(base)], k, beta)] if base else []
    sup = [score(m, s, beta) for _, m, s in select_topk(pool, k, beta)] if pool else []
    assert len(sup) >= len(sub)
    assert all(a >= b for a, b in zip(sup, sub))


# -- compute bounds ---------------------------------------------------------


def test_expansion_bound_examples():
    assert expansion_bound([2, 2], [3, 3]) == 18
    assert expansion_bound([4], [5]) == 20
    assert expansion_bound([1] * 7, [1] * 7) == 7


def test_envelope_examples():
    assert total_compute_envelope(18, 10, 50) == (180, 900)
    assert total_compute_envelope(0, 10, 50) == (0, 0)
    assert total_compute_envelope(7, 3, 3) == (21, 21)


def brute_count(b, g):
    """Candidates generated by a full tree where every node spawns b labels of g drafts and b survive."""
    total, nodes = 0, 1
    for bd, gd in zip(b, g):
        total += nodes * bd * gd
        nodes = len(list(itertools.product(range(nodes), range(bd))))
    return total


@given(st.lists(st.tuples(st.integers(1, 4), st.integers(1, 4)), min_size=1, max_size=4))
def test_expansion_bound_matches_full_tree(pairs):
    b, g = [p[0] for p in pairs], [p[1] for p in pairs]
    assert expansion_bound(b, g) == brute_count(b, g)


# -- engine -----------------------------------------------------------------


def run_engine(schema, controls, labeller=None, budget=None, tuner=None, generator=None, verifier=ACCEPT, **cfg):
    engine = SearchEngine(
        schema,
        generator or ScriptedGenerator(),
        labeller or ConstantLabeller(),
        tuner or constant_tuner(controls, schema),
        verifier,
        budget or RunBudget(10_000, 64, 4, 1, 100),
        EngineConfig(**cfg),
    )
    return engine.run(0, 0)


def test_constant_cot_is_a_chain(schema):
    result = run_engine(schema, cot_controls(schema))
    assert check_tree(result) == []
    assert all(len(ev["candidates"]) == 1 and len(ev["survivors"]) == 1 for ev in result.events)
    depths = [n.depth for n in result.nodes]
    assert depths == list(range(len(depths)))
    assert result.end["expansions"] == max(depths)
    assert result.end["reason"] == "final-answer"


def test_two_labels_three_drafts_two_survivors(schema, pi0):
    controls = pi0.replace(gen_count=3, branch_quota=2)
    labeller = BackendLabeller(MockBackend(["work backward\nseek a counterexample"]))
    result = run_engine(schema, controls, labeller=labeller, budget=RunBudget(10_000, 64, 1, 1, 100))
    first = result.events[0]
    assert first["labels"] == ["work backward", "seek a counterexample"]
    assert len(first["candidates"]) == 6
    assert len(first["survivors"]) == 2


def test_rejected_candidates_never_survive(schema, pi0):
    reject_odd = lambda cand, i, cfg: (cand.text.endswith(("0", "2")), "")  # noqa: E731
    result = run_engine(schema, pi0.replace(gen_count=3), verifier=reject_odd)
    for ev in result.events:
        verified = {c["id"] for c in ev["candidates"] if c["verified"]}
        assert set(ev["survivors"]) <= verified


def test_exhausted_budget_stops_without_tuner_or_generator(schema, pi0):
    tuner = CountingTuner(pi0)
    gen = ScriptedGenerator(tokens_per_draft=50)
    result = run_engine(schema, pi0, tuner=tuner, generator=gen, budget=RunBudget(10, 64, 4, 1, 100))
    expand, stop = result.events
    assert expand["type"] == "expand" and stop["type"] == "stop"
    assert stop["labels"] == ["stop"]
    assert stop["pi_applied"] == [pi0.to_dict()]
    assert stop["provenance"] == ["clamped_budget"]
    assert tuner.calls == 1 and gen.calls == 1
    assert result.end["reason"] == "token-budget"


def test_controls_outside_region_are_projected(schema, pi0):
    far = pi0.replace("emitted", temperature=2.0, gen_count=8)
    result = run_engine(schema, far)
    for ev in result.events:
        applied = ev["pi_applied"][0]
        assert applied["temperature"] == pytest.approx(pi0["temperature"] + 0.15 * 2.0)
        assert applied["gen_count"] == 3
        assert set(ev["projected"][0]) == {"temperature", "gen_count"}
        assert ev["provenance"] == ["projected"]


def test_beta_non_increasing_even_for_rising_tuner(schema, pi0):
    class Rising:
        def propose(self, parent_text, label, context):
            return TunerResult(pi0.replace(beta=min(0.45, 0.1 + 0.1 * context.depth)))

    result = run_engine(schema, pi0, tuner=Rising())
    for path in beta_paths(result):
        assert all(b <= a for a, b in zip(path, path[1:]))


def test_constant_beta_without_annealing(schema):
    result = run_engine(schema, tot_controls(schema), gamma_a=1.0)
    assert {ev["beta_used"] for ev in result.events} == {tot_controls(schema)["beta"]}


def test_expansion_cap_respected(schema):
    result = run_engine(schema, tot_controls(schema), budget=RunBudget(10_000, 3, 6, 1, 100))
    assert result.end["expansions"] == 3
    assert result.end["reason"] == "expansion-cap"


def test_generated_count_within_bound(schema):
    controls = tot_controls(schema)
    budget = RunBudget(10_000, 64, 3, 1, 100)
    result = run_engine(schema, controls, budget=budget)
    b, g = int(controls["branch_quota"]), int(controls["gen_count"])
    bound = expansion_bound([b] * 3, [g] * 3)
    assert result.end["generated"] <= bound
    low, high = total_compute_envelope(result.end["generated"], budget.c_min, budget.c_max)
    assert low <= result.end["cost_total"] <= high


def test_run_budget_validation():
    with pytest.raises(ValueError):
        RunBudget(0, 1, 1)
    with pytest.raises(ValueError):
        RunBudget(10, 1, 1, c_min=5, c_max=1)
    assert RunBudget(100, 4, 2).scaled(0.5).token_limit == 50


def test_backend_generator_prompt_sections(pi0):
    prompts = []

    def respond(req, rng):
        prompts.append(req.prompt)
        return "step"

    gen = BackendGenerator(MockBackend(respond), lambda text: (0.5, 0.1, False))
    gen.gen_bundle("parent", 0, Label("recall a lemma"), pi0, 1, 0, retrieved=("snippet one",))
    gen.gen_bundle("parent", 0, Label("recall a lemma"), pi0, 1, 0)
    assert "RETRIEVED\nsnippet one\n" in prompts[0]
    assert "RETRIEVED" not in prompts[1] and "recall a lemma" in prompts[1]
