"""Acceptance gate: each criterion at its stated tolerance, one PASS/FAIL line each."""

from __future__ import annotations

import time

import pytest

from nlel.fuzz import _make_cases, fuzz_corpus, run_through_engine
from nlel.metrics import budget_key
from nlel.runner import RunConfig, execute, live_outcomes_at
from nlel.schema import project_trust_region
from nlel.synthetic import SyntheticEnv, default_env_spec
from nlel.theory import (
    anytime_monotonicity,
    beta_annealing,
    carveout,
    compute_accounting,
    distortion_shortfall,
    sample_controls,
    search_matrix,
    structured_diversity,
    trust_region_swing,
    verification_error,
)
from nlel.trace import dumps_trace

FULL = RunConfig()  # 5 seeds x 20 instances


def failing(result) -> str:
    bad = [c.line() for c in result.checks if not c.passed]
    return "; ".join(bad) or "all checks within bound"


@pytest.fixture(scope="module")
def swing():
    return trust_region_swing(10_000, L_lip=2.0, r=0.15)


@pytest.fixture(scope="module")
def matrix():
    return search_matrix(FULL)


def test_anytime_monotonicity(acceptance):
    start = time.perf_counter()
    res = anytime_monotonicity(10_000)
    seconds = time.perf_counter() - start
    ok = res.passed and seconds < 10
    acceptance(1, "anytime monotonicity", ok, f"10000 pairs, {seconds:.2f}s, {failing(res)}")
    assert ok


@pytest.mark.xfail(
    strict=True,
    reason="projection can move arbitrary controls by up to the full normalized range, so the literal "
    "|S(proj Pi) - S(Pi)| <= L*r fails; the distance-scaled and to-defaults bounds are asserted instead",
)
def test_trust_region_literal_bound(acceptance, swing):
    res = swing
    info = res.info
    ok = info["literal_violations"] == 0
    acceptance(
        2,
        "trust-region swing <= L*r over arbitrary controls",
        ok,
        f"{info['literal_violations']}/10000 beyond slack {info['slack']:.2f}, max swing {info['literal_max_swing']:.3f} "
        f"vs {info['literal_bound']:.2f} (corrected bounds: {'hold' if res.passed else 'FAIL'})",
    )
    assert res.passed
    assert ok


def test_trust_region_corrected_bounds(swing):
    assert swing.passed, failing(swing)


def test_trust_region_literal_bound_holds_near_defaults():
    # controls already within 2r of the defaults: projection moves them at most r
    env = SyntheticEnv(default_env_spec())

    def near(schema, rng):
        return project_trust_region(schema, sample_controls(schema, rng), env.pi0, 0.30)

    res = trust_region_swing(2_000, L_lip=2.0, r=0.15, sampler=near)
    assert res.info["literal_max_swing"] <= res.info["literal_bound"] + 1e-12


def test_verification_error(acceptance):
    res = verification_error(eps=0.1, passes=(1, 2, 3), n=100_000)
    acceptance(3, "verification error model", res.passed, failing(res))
    assert res.passed


def test_structured_diversity(acceptance):
    res = structured_diversity(n_alloc=20, trials=100_000)
    acceptance(4, "structured diversity", res.passed, failing(res))
    assert res.passed


def test_distortion_shortfall(acceptance):
    res = distortion_shortfall(bits_choices=(1, 2, 3))
    rows_ok = all(row["mean_shortfall"] <= row["bound"] for row in res.info["rows"])
    ok = res.passed and rows_ok
    acceptance(5, "distortion to shortfall", ok, f"{len(res.info['rows'])} bit configurations, {failing(res)}")
    assert ok


def test_reductions_byte_identical(acceptance):
    mismatched, total = [], 0
    for shape in ("cot", "tot"):
        engine = execute(FULL.replace(policy=f"constant_{shape}"), write=False)
        base = execute(FULL.replace(policy=f"baseline_{shape}"), write=False)
        assert sorted(engine.results) == sorted(base.results)
        for key in engine.results:
            total += 1
            if dumps_trace(engine.results[key].records) != dumps_trace(base.results[key].records):
                mismatched.append((shape, key))
    ok = not mismatched and total == 2 * 5 * 20
    acceptance(6, "constant policies reduce to CoT/ToT", ok, f"{total - len(mismatched)}/{total} traces identical")
    assert ok


def test_compute_accounting(acceptance, matrix):
    runs, _, _ = matrix
    res = compute_accounting(runs)
    acceptance(7, "compute accounting", res.passed, f"{len(runs)} runs, {failing(res)}")
    assert res.passed


def test_carveout(acceptance):
    res = carveout(rho=0.2, gamma=0.5, alpha=0.9, eta=0.05)
    info = res.info
    acceptance(
        8,
        "carve-out decision",
        res.passed,
        f"bound {info['bound']:.4f} vs simulated {info['simulated']:.4f} (se {info['se']:.4f}), {failing(res)}",
    )
    assert res.passed


def test_beta_annealing(acceptance, matrix):
    runs, off_const, off_any = matrix
    res = beta_annealing([r for r, _, _ in runs] + off_any, off_const)
    acceptance(9, "beta annealing", res.passed, failing(res))
    assert res.passed


def test_jpe_fuzz(acceptance, env):
    corpus = fuzz_corpus(env.schema, 1000, seed=0)
    outcomes = [run_through_engine(env.schema, env, case) for case in corpus]
    crashed = sum(o.crashed is not None for o in outcomes)
    correct = sum(o.fallback_correct for o in outcomes)
    # float rounding in the projection can overshoot r by an ulp
    outside = sum(o.applied_distance > 0.15 + 1e-9 for o in outcomes)
    families = {c.kind for c in corpus} == set(_make_cases(env.schema))
    ok = crashed == 0 and outside == 0 and correct == 1000 and families
    acceptance(10, "JPE robustness", ok, f"1000 cases, {crashed} crashes, {outside} outside region, {correct}/1000 fallback-correct")
    assert ok


def test_determinism_and_replay(acceptance, tmp_path):
    cfg = FULL.replace(policy="nlel_jpe", output_dir=str(tmp_path / "run"))

    def snapshot():
        root = tmp_path / "run"
        return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}

    a = execute(cfg)
    first = snapshot()
    b = execute(cfg)
    files = sorted(first)
    same_bytes = first == snapshot() and a.files == b.files and "report.json" in first
    replay_ok = []
    for mult in (0.5, 1.0, 2.0):
        live = live_outcomes_at(cfg, mult)
        replay_ok.append(sum(o.solved for o in live) / len(live) == a.report.per_budget[budget_key(mult)]["accuracy"])
    ok = same_bytes and all(replay_ok)
    acceptance(11, "determinism and replay", ok, f"{len(files)} files byte-identical={same_bytes}, live==replay at 0.5/1/2x={replay_ok}")
    assert ok
