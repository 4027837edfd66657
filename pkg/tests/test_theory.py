from __future__ import annotations

import pytest

from nlel.runner import RunConfig
from nlel.theory import (
    SUITES,
    Check,
    anytime_monotonicity,
    check_theory,
    compute_accounting,
    distortion_shortfall,
    format_results,
    reachable_max,
    search_matrix,
    trust_region_swing,
)

QUICK_CFG = RunConfig(seeds=(0,), instances=3, n_resamples=20)


@pytest.fixture(scope="module")
def quick_results():
    return {r.suite: r for r in check_theory(QUICK_CFG, quick=True)}


def test_every_suite_runs_and_passes(quick_results):
    assert list(quick_results) == list(SUITES)
    for res in quick_results.values():
        assert res.passed, format_results([res])


def test_check_margin_and_line():
    c = Check("x", 0.2, 0.3, True)
    assert c.margin == pytest.approx(0.1)
    assert c.line().startswith("PASS  x")


def test_unknown_suite_rejected():
    with pytest.raises(ValueError):
        check_theory(QUICK_CFG, ["prop-whatever"])


def test_monotonicity_fast():
    res = anytime_monotonicity(10_000)
    assert res.passed and res.info["seconds"] < 10


def test_swing_widens_with_radius():
    narrow = trust_region_swing(500, r=0.05)
    wide = trust_region_swing(500, r=1.0)
    assert narrow.passed and wide.passed
    assert wide.info["literal_bound"] == 2.0
    assert wide.info["max_projection_move"] == 0.0


def test_shortfall_rows_within_bound():
    res = distortion_shortfall((1, 2, 3), n_states=10)
    assert len(res.info["rows"]) == 27
    for row in res.info["rows"]:
        assert row["mean_shortfall"] <= row["bound"]
        assert row["mean_distortion"] <= row["delta"] / 2 + 1e-12


def test_reachable_caps(schema, pi0):
    # quota default 2 over [1, 8]: 0.15 * 7 = 1.05 more steps
    assert reachable_max(schema, pi0, 0.15, "branch_quota") == 3
    assert reachable_max(schema, pi0, 1.0, "gen_count") == 8


def test_accounting_detects_violation():
    runs, _, _ = search_matrix(QUICK_CFG, ("constant_tot",))
    run, b, g = runs[0]
    run.end["cost_total"] = 1e9
    assert not compute_accounting([(run, b, g)]).passed
