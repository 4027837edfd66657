from __future__ import annotations

import hashlib
import json

import pytest

from nlel.runner import (
    ConfigError,
    RunConfig,
    ablate,
    build_search,
    execute,
    live_outcomes_at,
    load_world,
)
from nlel.search import check_tree
from nlel.trace import outcome_of, read_trace

SMALL = RunConfig(seeds=(0, 1), instances=3, n_resamples=50)


def test_defaults_valid():
    cfg = RunConfig().check()
    assert cfg.trust_radius == 0.15 and cfg.seeds == (0, 1, 2, 3, 4)


@pytest.mark.parametrize(
    "patch, field",
    [
        ({"trust_radius": 1.5}, "trust_radius"),
        ({"seeds": []}, "seeds"),
        ({"policy": "magic"}, "policy"),
        ({"token_limit": 0}, "token_limit"),
        ({"schema_path": "/nowhere.json"}, "schema_path"),
        ({"banana": 1}, "banana"),
        ({"seeds": "0,1"}, "seeds"),
    ],
)
def test_invalid_config_lists_field(patch, field):
    with pytest.raises(ConfigError) as info:
        RunConfig.from_dict({**RunConfig().to_dict(), **patch})
    assert any(p.startswith(field) for p in info.value.problems)


def test_config_file_roundtrip(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(SMALL.to_dict()))
    loaded = RunConfig.load(path)
    assert loaded == SMALL and loaded.digest() == SMALL.digest()


def test_bad_config_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text("[1]")
    with pytest.raises(ConfigError):
        RunConfig.load(path)


def test_execute_writes_manifest_with_hashes(tmp_path):
    cfg = SMALL.replace(output_dir=str(tmp_path / "out"))
    out = execute(cfg)
    root = tmp_path / "out"
    manifest = json.loads((root / "manifest.json").read_text())
    assert manifest["config_digest"] == cfg.digest()
    assert manifest["seeds"] == [0, 1]
    for name, digest in manifest["files"].items():
        assert hashlib.sha256((root / name).read_bytes()).hexdigest() == digest
    assert len(list((root / "traces").rglob("*.jsonl"))) == 6
    assert json.loads((root / "report.json").read_text())["failed_instances"] == []
    assert out.report.per_budget["1.0x"]["instances"] == 6


def test_execute_is_byte_deterministic():
    a = execute(SMALL, write=False).files
    b = execute(SMALL, write=False).files
    assert a == b


def test_workers_do_not_change_traces():
    pooled = execute(SMALL.replace(workers=3), write=False)
    serial = execute(SMALL, write=False)
    assert pooled.traces == serial.traces
    assert pooled.report.to_dict() == serial.report.to_dict()


def test_seeds_change_traces():
    a = execute(SMALL.replace(seeds=[0]), write=False).files
    b = execute(SMALL.replace(seeds=[5]), write=False).files
    assert a["report.json"] != b["report.json"]


def test_failed_instance_isolated(monkeypatch):
    import nlel.runner as runner

    real = runner.run_instance

    def flaky(cfg, world, seed, instance):
        if instance == 1:
            raise RuntimeError("backend died")
        return real(cfg, world, seed, instance)

    monkeypatch.setattr(runner, "run_instance", flaky)
    out = execute(SMALL, write=False)
    assert [(f["seed"], f["instance"]) for f in out.failed] == [(0, 1), (1, 1)]
    assert len(out.results) == 4


def test_constant_cot_runs_are_chains():
    out = execute(SMALL.replace(policy="constant_cot"), write=False)
    for result in out.results.values():
        assert check_tree(result) == []
        depths = sorted(n.depth for n in result.nodes)
        assert depths == list(range(len(depths)))
        # depth reached counts the deepest generated step, kept or rejected
        assert all(len(ev["candidates"]) == 1 for ev in result.events)
        reached = max(ev["depth"] + 1 for ev in result.events)
        assert result.end["expansions"] == reached


def test_live_runs_equal_replay_at_each_multiplier():
    out = execute(SMALL, write=False)
    for mult, key in ((0.5, "0.5x"), (1.0, "1.0x"), (2.0, "2.0x")):
        live = live_outcomes_at(SMALL, mult)
        assert sum(o.solved for o in live) / len(live) == out.report.per_budget[key]["accuracy"]


def test_ledger_grows_across_runs(tmp_path):
    ledger = tmp_path / "ledger.jsonl"
    cfg = SMALL.replace(ledger_path=str(ledger), output_dir=str(tmp_path / "a"), seeds=[0], instances=1)
    execute(cfg)
    first = ledger.read_text().count("\n")
    assert first > 0
    execute(cfg.replace(output_dir=str(tmp_path / "b")))
    assert ledger.read_text().count("\n") > first


def test_ledger_reaches_tuner_prompt(tmp_path):
    ledger = tmp_path / "ledger.jsonl"
    cfg = SMALL.replace(ledger_path=str(ledger), output_dir=str(tmp_path / "a"), seeds=[0], instances=1)
    execute(cfg)
    out = execute(cfg.replace(output_dir=str(tmp_path / "b")))
    audits = read_trace(tmp_path / "b" / "audits" / "seed0" / "instance0000.jsonl")
    assert any("[PARETO]" in a["prompt"] for a in audits)
    assert out.results


def test_random_labels_make_no_labeller_calls():
    result = build_search(SMALL.replace(policy="random_labels"), load_world(SMALL), 0).run(0, 0)
    roles = {u["role"] for ev in result.events for u in ev["usage"]}
    assert "labeller" not in roles and "tuner" in roles


def test_ablation_rows_cover_grid():
    rows = ablate(SMALL.replace(seeds=[0], instances=2), ["trust_radius", "anneal"])
    assert [(r["axis"], r["value"]) for r in rows] == [
        ("trust_radius", 0.05), ("trust_radius", 0.15), ("trust_radius", 0.3), ("anneal", True), ("anneal", False)
    ]
    assert all(set(r["success_at_compute"]) == {"0.5x", "1.0x", "2.0x"} for r in rows)


def test_quantized_ablation_applies_levels():
    cfg = SMALL.replace(seeds=[0], instances=1, quant_bits={"temperature": 2})
    result = build_search(cfg, load_world(cfg), 0).run(0, 0)
    for ev in result.events:
        for pi in ev["pi_applied"]:
            # quantized to thirds of [0, 2], then clipped to 0.7 +- 0.3
            assert pi["temperature"] in (pytest.approx(2 / 3), pytest.approx(0.4), pytest.approx(1.0), pytest.approx(0.7))


def test_outcome_matches_end_record():
    result = build_search(SMALL, load_world(SMALL), 1).run(2, 1)
    o = outcome_of(result.records)
    assert (o.solved, o.tokens_used, o.instance, o.seed) == (result.solved, result.tokens_used, 2, 1)
