"""Run configuration, policy wiring and the experiment driver."""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping, Sequence

from .adapter import HTTPBackend, MockBackend
from .baseline import BaselineSearch, cot_controls, tot_controls
from .ledger import LedgerRow, load_ledger, save_ledger
from .metrics import BUDGET_MULTIPLIERS, MetricsReport, report_from_traces
from .policies import BackendLabeller, ConstantLabeller, JPEConfig, JPETuner, RandomLabeller, constant_tuner
from .rng import derive_seed
from .schema import ControlSchema, canonical_schema, load_schema
from .search import EngineConfig, RunBudget, RunResult, SearchEngine, ledger_rows
from .synthetic import SyntheticEnv, default_env_spec, directive_labeller, hinting_tuner, load_env_spec
from .trace import dumps, dumps_trace, outcome_of
from .verification import MODES, SyntheticVerifier

POLICIES = ("nlel_jpe", "constant_cot", "constant_tot", "random_labels", "baseline_cot", "baseline_tot")
POLICY_BACKENDS = ("mock", "http")


class ConfigError(ValueError):
    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("invalid run config: " + "; ".join(self.problems))


@dataclass(frozen=True)
class RunConfig:
    policy: str = "nlel_jpe"
    schema_path: str | None = None
    env_path: str | None = None
    policy_backend: str = "mock"
    trust_radius: float = 0.15
    beta0: float | None = None
    gamma_a: float = 0.7
    anneal: bool = True
    token_limit: int = 8000
    expansion_cap: int = 64
    depth_cap: int = 4
    c_min: float = 10.0
    c_max: float = 50.0
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    instances: int = 20
    lam: float = 0.1
    ledger_path: str | None = None
    ledger_rows: int = 8
    quant_bits: Mapping[str, int] | None = None
    verify_mode: str = "independent"
    eps0: float = 0.1
    false_reject: float = 0.0
    output_dir: str = "runs/default"
    workers: int = 1
    resample_seed: int = 0
    n_resamples: int = 1000

    def problems(self) -> list[str]:
        out = []
        if self.policy not in POLICIES:
            out.append(f"policy: must be one of {list(POLICIES)}")
        if self.policy_backend not in POLICY_BACKENDS:
            out.append(f"policy_backend: must be one of {list(POLICY_BACKENDS)}")
        if not 0.0 <= self.trust_radius <= 1.0:
            out.append("trust_radius: must lie in [0, 1]")
        if not 0.0 < self.gamma_a <= 1.0:
            out.append("gamma_a: must lie in (0, 1]")
        if self.beta0 is not None and not 0.0 <= self.beta0 <= 1.0:
            out.append("beta0: must lie in [0, 1]")
        for name in ("token_limit", "expansion_cap", "depth_cap", "instances", "workers", "n_resamples"):
            if not isinstance(getattr(self, name), int) or getattr(self, name) < 1:
                out.append(f"{name}: must be a positive integer")
        if not 0 < self.c_min <= self.c_max:
            out.append("c_min/c_max: need 0 < c_min <= c_max")
        if not self.seeds:
            out.append("seeds: must be non-empty")
        if self.lam < 0:
            out.append("lam: must be non-negative")
        if self.ledger_rows < 0:
            out.append("ledger_rows: must be non-negative")
        if self.verify_mode not in MODES:
            out.append(f"verify_mode: must be one of {list(MODES)}")
        for name in ("schema_path", "env_path"):
            path = getattr(self, name)
            if path is not None and not Path(path).exists():
                out.append(f"{name}: {path} does not exist")
        return out

    def check(self) -> RunConfig:
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> RunConfig:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError([f"{k}: unknown config key" for k in unknown])
        d = dict(d)
        if "seeds" in d:
            if not isinstance(d["seeds"], list) or not all(isinstance(s, int) for s in d["seeds"]):
                raise ConfigError(["seeds: must be a list of integers"])
            d["seeds"] = tuple(d["seeds"])
        try:
            cfg = cls(**d)
        except TypeError as exc:
            raise ConfigError([str(exc)]) from None
        return cfg.check()

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError([f"config file: {exc}"]) from None
        if not isinstance(doc, dict):
            raise ConfigError(["config file: top level must be an object"])
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        d["quant_bits"] = dict(self.quant_bits) if self.quant_bits else None
        return d

    def digest(self) -> str:
        body = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(body.encode()).hexdigest()[:16]

    def replace(self, **updates: Any) -> RunConfig:
        return RunConfig.from_dict({**self.to_dict(), **updates})

    @property
    def budget(self) -> RunBudget:
        return RunBudget(self.token_limit, self.expansion_cap, self.depth_cap, self.c_min, self.c_max)

    @property
    def run_budget(self) -> RunBudget:
        """Runs use the largest budget point; smaller points are replayed."""
        return self.budget.scaled(max(BUDGET_MULTIPLIERS))


@dataclass
class World:
    schema: ControlSchema
    env: SyntheticEnv
    ledger: list[LedgerRow] = field(default_factory=list)


def load_world(cfg: RunConfig) -> World:
    schema = load_schema(cfg.schema_path) if cfg.schema_path else canonical_schema()
    if cfg.beta0 is not None:
        schema = schema.with_default(beta=cfg.beta0)
    spec = load_env_spec(cfg.env_path) if cfg.env_path else default_env_spec()
    ledger = load_ledger(cfg.ledger_path) if cfg.ledger_path else []
    return World(schema, SyntheticEnv(spec, schema), ledger)


def engine_config(cfg: RunConfig, world: World) -> EngineConfig:
    return EngineConfig(
        trust_radius=cfg.trust_radius,
        gamma_a=cfg.gamma_a if cfg.anneal else 1.0,
        verify_mode=cfg.verify_mode,
        verify_tokens_per_pass=world.env.spec.verify_tokens,
        quant_bits=dict(cfg.quant_bits) if cfg.quant_bits else None,
    )


def policy_backends(cfg: RunConfig, world: World, seed: int):
    if cfg.policy_backend == "http":
        backend = HTTPBackend.from_env()
        return backend, backend
    labeller = MockBackend(directive_labeller(), seed=derive_seed("labeller", seed), backend_id="mock-labeller")
    tuner = MockBackend(hinting_tuner(world.env), seed=derive_seed("tuner", seed), backend_id="mock-tuner")
    return labeller, tuner


def build_search(cfg: RunConfig, world: World, seed: int) -> SearchEngine | BaselineSearch:
    verifier = SyntheticVerifier(cfg.eps0, cfg.false_reject, seed=derive_seed("verifier", seed))
    budget = cfg.run_budget
    econf = engine_config(cfg, world)
    schema = world.schema
    if cfg.policy == "baseline_cot":
        return BaselineSearch(schema, world.env, cot_controls(schema), verifier, budget, econf)
    if cfg.policy == "baseline_tot":
        return BaselineSearch(schema, world.env, tot_controls(schema), verifier, budget, econf)
    if cfg.policy == "constant_cot":
        return SearchEngine(schema, world.env, ConstantLabeller(), constant_tuner(cot_controls(schema), schema), verifier, budget, econf)
    if cfg.policy == "constant_tot":
        return SearchEngine(schema, world.env, ConstantLabeller(), constant_tuner(tot_controls(schema), schema), verifier, budget, econf)
    label_backend, tuner_backend = policy_backends(cfg, world, seed)
    jpe = JPEConfig.for_schema(schema, max_ledger_rows=cfg.ledger_rows)
    tuner = JPETuner(schema, tuner_backend, jpe, world.ledger)
    if cfg.policy == "random_labels":
        labeller = RandomLabeller(seed=derive_seed("random-labels", seed))
    else:
        labeller = BackendLabeller(label_backend)
    return SearchEngine(schema, world.env, labeller, tuner, verifier, budget, econf)


def run_instance(cfg: RunConfig, world: World, seed: int, instance: int) -> RunResult:
    return build_search(cfg, world, seed).run(instance, seed)


@dataclass
class RunOutput:
    results: dict[tuple[int, int], RunResult]
    failed: list[dict]
    report: MetricsReport
    files: dict[str, str]

    @property
    def traces(self) -> list[list[dict]]:
        return [self.results[key].records for key in sorted(self.results)]


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def execute(cfg: RunConfig, world: World | None = None, write: bool = True) -> RunOutput:
    """Run every (seed, instance) pair, then score by budget replay.

    Each instance is isolated; a crashing instance is reported as failed and
    the rest proceed. Output files are deterministic for a given config.
    """
    cfg.check()
    world = world or load_world(cfg)
    jobs = [(seed, i) for seed in cfg.seeds for i in range(cfg.instances)]
    results: dict[tuple[int, int], RunResult] = {}
    failed: list[dict] = []

    def work(job: tuple[int, int]):
        seed, instance = job
        try:
            return job, run_instance(cfg, world, seed, instance), None
        except Exception as exc:  # one bad instance must not kill the run
            return job, None, f"{type(exc).__name__}: {exc}"

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            finished = list(pool.map(work, jobs))
    else:
        finished = [work(job) for job in jobs]
    for job, result, error in finished:
        if result is None:
            failed.append({"seed": job[0], "instance": job[1], "error": error})
        else:
            results[job] = result

    traces = [results[key].records for key in sorted(results)]
    report = report_from_traces(traces, cfg.token_limit, BUDGET_MULTIPLIERS, cfg.resample_seed, cfg.n_resamples)
    report_doc = {
        "config_digest": cfg.digest(),
        "policy": cfg.policy,
        "failed_instances": failed,
        "live": [outcome_of(t).to_dict() for t in traces],
        **report.to_dict(),
    }
    files: dict[str, str] = {}
    for (seed, instance), result in sorted(results.items()):
        files[f"traces/seed{seed}/instance{instance:04d}.jsonl"] = dumps_trace(result.records)
        if result.audits:
            files[f"audits/seed{seed}/instance{instance:04d}.jsonl"] = dumps_trace(result.audits)
    files["report.json"] = json.dumps(report_doc, sort_keys=True, indent=2) + "\n"
    files["config.json"] = json.dumps(cfg.to_dict(), sort_keys=True, indent=2) + "\n"
    manifest = {
        "config_digest": cfg.digest(),
        "seeds": list(cfg.seeds),
        "instances": cfg.instances,
        "env_digest": world.env.spec.digest(),
        "schema_version": world.schema.version,
        "files": {name: _sha(text) for name, text in sorted(files.items())},
    }
    files["manifest.json"] = json.dumps(manifest, sort_keys=True, indent=2) + "\n"

    if write:
        root = Path(cfg.output_dir)
        for name, text in files.items():
            path = root / name
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text, encoding="utf-8")
        if cfg.ledger_path:
            new_rows = [row for key in sorted(results) for row in ledger_rows(results[key])]
            save_ledger(cfg.ledger_path, [*world.ledger, *new_rows])
    return RunOutput(results, failed, report, files)


def live_outcomes_at(cfg: RunConfig, multiplier: float, world: World | None = None) -> list:
    """Outcomes of separate live runs at one budget multiplier (for replay checks)."""
    world = world or load_world(cfg)
    budget = cfg.budget.scaled(multiplier)
    out = []
    for seed in cfg.seeds:
        for i in range(cfg.instances):
            search = build_search(cfg, world, seed)
            search.budget = budget
            out.append(outcome_of(search.run(i, seed).records))
    return out


ABLATION_GRID = {
    "trust_radius": (0.05, 0.15, 0.3),
    "ledger_rows": (0, 8, 32),
    "quant_bits": (None, 1, 2, 3),
    "anneal": (True, False),
}


WARMUP_SEED_OFFSET = 10_000


def ablate(cfg: RunConfig, axes: Sequence[str] = tuple(ABLATION_GRID)) -> list[dict]:
    """One-at-a-time sweeps around ``cfg``; returns a row per setting."""
    world = load_world(cfg)
    if "ledger_rows" in axes and not world.ledger:
        # warm-up ledger from disjoint seeds so the ledger-size axis has rows to show
        warm = execute(cfg.replace(seeds=[s + WARMUP_SEED_OFFSET for s in cfg.seeds]), world, write=False)
        world.ledger = [row for key in sorted(warm.results) for row in ledger_rows(warm.results[key])][:256]
    rows = []
    for axis in axes:
        for value in ABLATION_GRID[axis]:
            if axis == "quant_bits":
                bits = None if value is None else {f.name: value for f in world.schema.fields if f.quantizable}
                variant = cfg.replace(quant_bits=bits)
            else:
                variant = cfg.replace(**{axis: value})
            out = execute(variant, world, write=False)
            doc = out.report.to_dict()
            rows.append(
                {
                    "axis": axis,
                    "value": value,
                    "success_at_compute": doc["success_at_compute"],
                    "tokens_per_success": doc["tokens_per_success"],
                    "failed": len(out.failed),
                }
            )
    return rows


def dumps_rows(rows: Sequence[dict]) -> str:
    return "".join(dumps(r) + "\n" for r in rows)
