"""Executable property suites over the synthetic environment.

Every suite returns raw measurements next to the bound it is checked
against, so callers can print margins or apply their own tolerances.
"""

from __future__ import annotations

import itertools
import math
import random
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .ledger import CarveoutEstimate, carveout_advantage
from .rng import rng_for
from .schema import ControlSchema, ControlVector, distance, project_trust_region, quantize, validate
from .search import RunResult, anneal_beta, beta_paths, expansion_bound, score, select_topk, total_compute_envelope
from .synthetic import (
    CarveoutWorld,
    SyntheticEnv,
    default_env_spec,
    env_best_control,
    sample_scores,
    shortfall_schema,
    tail_probability_rates,
)
from .verification import SyntheticVerifier, VerifierConfig, run_passes


@dataclass(frozen=True)
class Check:
    name: str
    measured: float
    bound: float
    passed: bool
    note: str = ""

    @property
    def margin(self) -> float:
        return self.bound - self.measured

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        note = f"  ({self.note})" if self.note else ""
        return f"{status}  {self.name}: measured={self.measured:.6g} bound={self.bound:.6g} margin={self.margin:.6g}{note}"


@dataclass
class SuiteResult:
    suite: str
    checks: list[Check] = field(default_factory=list)
    info: dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name: str, measured: float, bound: float, passed: bool | None = None, note: str = "") -> Check:
        ok = measured <= bound if passed is None else passed
        check = Check(name, float(measured), float(bound), bool(ok), note)
        self.checks.append(check)
        return check


def sample_controls(schema: ControlSchema, rng: random.Random) -> ControlVector:
    """A control vector drawn uniformly over the whole schema domain."""
    values: dict[str, Any] = {}
    for f in schema.fields:
        if f.kind == "continuous":
            values[f.name] = rng.uniform(f.lower, f.upper)
        elif f.kind == "integer":
            values[f.name] = rng.randint(int(f.lower), int(f.upper))
        elif f.kind == "boolean":
            values[f.name] = rng.random() < 0.5
        elif f.kind == "enum":
            values[f.name] = rng.choice(f.choices)
        else:
            gaps = [rng.expovariate(1.0) for _ in f.choices]
            total = sum(gaps)
            w = [g / total for g in gaps]
            w[-1] = 1.0 - sum(w[:-1])
            values[f.name] = dict(zip(f.choices, w))
    return validate(schema, values)


# -- selection --------------------------------------------------------------


def anytime_monotonicity(n_pairs: int = 10_000, seed: int = 0) -> SuiteResult:
    """Adding candidates never lowers any retained top-k order statistic."""
    rng = np.random.default_rng(seed)
    res = SuiteResult("anytime-monotonicity")
    violations = 0
    start = time.perf_counter()
    for _ in range(n_pairs):
        n_sub = int(rng.integers(1, 13))
        n_extra = int(rng.integers(0, 7))
        k = int(rng.integers(1, 6))
        beta = float(rng.uniform(0.0, 1.0))
        mus = rng.uniform(-1.0, 1.0, n_sub + n_extra)
        sigmas = rng.uniform(0.0, 0.5, n_sub + n_extra)
        if rng.random() < 0.2:  # force exact score ties
            mus[: n_sub + n_extra] = np.round(mus, 1)
            sigmas[:] = 0.0
        ids = rng.permutation(n_sub + n_extra)
        pool = [(int(ids[i]), float(mus[i]), float(sigmas[i])) for i in range(n_sub + n_extra)]
        sub = select_topk(pool[:n_sub], k, beta)
        sup = select_topk(pool, k, beta)
        s_sub = [score(m, s, beta) for _, m, s in sub]
        s_sup = [score(m, s, beta) for _, m, s in sup]
        if len(s_sup) < len(s_sub) or any(a < b for a, b in zip(s_sup, s_sub)):
            violations += 1
    elapsed = time.perf_counter() - start
    res.add("order-statistic violations", violations, 0)
    res.info.update(pairs=n_pairs, seconds=elapsed)
    return res


# -- trust region -----------------------------------------------------------


def trust_region_swing(
    n: int = 10_000,
    L_lip: float = 2.0,
    r: float = 0.15,
    seed: int = 0,
    sampler: Callable[[ControlSchema, random.Random], ControlVector] = sample_controls,
) -> SuiteResult:
    """Score change caused by projecting arbitrary controls into the trust region.

    The literal swing ``|S(proj Pi) - S(Pi)|`` is reported against ``L*r``.
    The checked statements are ``|S(proj Pi) - S(Pi)| <= L*d(proj Pi, Pi)``
    and ``|S(proj Pi) - S(Pi0)| <= L*r``, which hold for every input.
    """
    spec = default_env_spec()
    env = SyntheticEnv(type(spec).from_dict({**spec.to_dict(), "lipschitz": L_lip}))
    schema, pi0 = env.schema, env.pi0
    rng = random.Random(seed)
    names = [a.name for a in env.spec.archetypes]
    swings, gaps, to_default, moved = [], [], [], []
    for i in range(n):
        pi = sampler(schema, rng)
        key, arch = f"state-{seed}-{i}", rng.choice(names)
        proj = project_trust_region(schema, pi, pi0, r)
        s_pi, s_proj, s_0 = env.s_true(key, arch, pi), env.s_true(key, arch, proj), env.s_true(key, arch, pi0)
        d_move = distance(schema, proj, pi)
        swings.append(abs(s_proj - s_pi))
        gaps.append(abs(s_proj - s_pi) - L_lip * d_move)
        to_default.append(abs(s_proj - s_0))
        moved.append(d_move)
    swings_a = np.array(swings)
    slack = 0.05 * L_lip
    res = SuiteResult("trust-region-swing")
    res.add("swing minus L*d(proj, Pi)", max(gaps), 1e-12)
    res.add("|S(proj) - S(Pi0)| vs L*r", max(to_default), L_lip * r + 1e-12)
    res.info.update(
        literal_max_swing=float(swings_a.max()),
        literal_bound=L_lip * r,
        literal_violations=int(np.sum(swings_a > L_lip * r + slack)),
        slack=slack,
        max_projection_move=float(max(moved)),
        n=n,
    )
    return res


# -- verification -----------------------------------------------------------


@dataclass(frozen=True)
class _Probe:
    key: str
    correct: bool = False
    text: str = ""


def false_accept_rates(
    eps: float = 0.1, passes: Sequence[int] = (1, 2, 3), n: int = 100_000, mode: str = "independent", seed: int = 0
) -> dict[int, float]:
    verifier = SyntheticVerifier(eps0=eps, seed=seed)
    out = {}
    for t in passes:
        config = VerifierConfig(t, 0.0, mode)
        accepted = sum(run_passes(_Probe(f"c{t}-{i}"), config, verifier).accepted for i in range(n))
        out[t] = accepted / n
    return out


def verification_error(eps: float = 0.1, passes: Sequence[int] = (1, 2, 3), n: int = 100_000, seed: int = 0) -> SuiteResult:
    res = SuiteResult("verification-error")
    ind = false_accept_rates(eps, passes, n, "independent", seed)
    cor = false_accept_rates(eps, passes, n, "union_bound", seed)
    for t in passes:
        p = eps**t
        sd = math.sqrt(p * (1 - p) / n)
        res.add(f"t={t} independent |rate - eps^t| (3 sd)", abs(ind[t] - p), 3 * sd)
        res.add(f"t={t} correlated rate vs t*eps", cor[t], t * eps)
    ordered = [ind[t] for t in sorted(passes)]
    res.add("independent rate increases with t (count)", sum(b > a for a, b in zip(ordered, ordered[1:])), 0)
    res.info.update(independent=ind, correlated=cor)
    return res


# -- annealing --------------------------------------------------------------


def beta_annealing(runs: Sequence[RunResult], constant_runs: Sequence[RunResult] = ()) -> SuiteResult:
    """Per-path beta is non-increasing; with annealing off and fixed controls it is constant."""
    res = SuiteResult("beta-annealing")
    rises = 0
    for run in runs:
        for path in beta_paths(run):
            rises += sum(b > a for a, b in zip(path, path[1:]))
    res.add("beta increases along a path", rises, 0)
    changes = 0
    for run in constant_runs:
        betas = {ev["beta_used"] for ev in run.events if ev["beta_used"] is not None}
        changes += max(0, len(betas) - 1)
    if constant_runs:
        res.add("distinct beta values beyond one (annealing off)", changes, 0)
    schedule_rises = sum(
        anneal_beta(b0, d + 1, g) > anneal_beta(b0, d, g) for b0 in (0.0, 0.3, 1.0) for g in (0.5, 0.7, 1.0) for d in range(10)
    )
    res.add("schedule increases with depth", schedule_rises, 0)
    return res


# -- structured diversity ---------------------------------------------------


def structured_diversity(n_alloc: int = 20, trials: int = 100_000, seed: int = 0) -> SuiteResult:
    """Monte Carlo best-of-allocation crossing frequency against the product formula."""
    env = SyntheticEnv(default_env_spec())
    archetypes = [a for a in env.spec.archetypes if a.pattern is not None][:3]
    rng = rng_for("diversity", seed)
    res = SuiteResult("structured-diversity")
    worst_z, worst_gap = 0.0, -math.inf
    rows = []
    for j in range(n_alloc):
        counts = [int(c) for c in rng.integers(0, 5, size=len(archetypes))]
        if sum(counts) == 0:
            counts[int(rng.integers(0, len(counts)))] = 1
        exact, lower = tail_probability_rates([a.tail_rate for a in archetypes], counts)
        crossed_any = np.zeros(trials, dtype=bool)
        for arch, n_l in zip(archetypes, counts):
            if n_l == 0:
                continue
            s_max = env.spec.s_max
            mu, _, _ = sample_scores(arch, s_max, s_max, env.spec.tau, (trials, n_l), rng)
            crossed_any |= mu.max(axis=1) >= env.spec.tau
        freq = float(crossed_any.mean())
        sd = math.sqrt(max(exact * (1 - exact), 1e-300) / trials)
        z = abs(freq - exact) / sd if sd > 0 else (0.0 if freq == exact else math.inf)
        worst_z = max(worst_z, z)
        worst_gap = max(worst_gap, lower - exact)
        rows.append({"counts": counts, "exact": exact, "lower": lower, "freq": freq, "z": z})
    res.add("worst |freq - exact| in sd", worst_z, 3.0)
    res.add("lower bound minus exact (worst)", worst_gap, 1e-12)
    res.info["rows"] = rows
    return res


# -- distortion to shortfall ------------------------------------------------


def distortion_shortfall(
    bits_choices: Sequence[int] = (1, 2, 3), n_states: int = 60, grid_resolution: float = 0.0125, r: float = 0.15, seed: int = 0
) -> SuiteResult:
    """Quantized optimal controls versus the grid oracle, for every per-field bit allocation."""
    env = SyntheticEnv(default_env_spec(), shortfall_schema())
    L = env.spec.lipschitz
    quantizable = [f.name for f in env.schema.fields if f.quantizable]
    rng = random.Random(seed)
    names = [a.name for a in env.spec.archetypes]
    states = [(f"shortfall-{seed}-{i}", rng.choice(names)) for i in range(n_states)]
    oracle = {s: env_best_control(env, s[0], s[1], r, grid_resolution)[1] for s in states}
    stars = {s: env.pi_star(*s) for s in states}
    res = SuiteResult("distortion-shortfall")
    rows = []
    worst = -math.inf
    for combo in itertools.product(bits_choices, repeat=len(quantizable)):
        bits = dict(zip(quantizable, combo))
        shortfalls, distortions = [], []
        delta = 0.0
        for s in states:
            pi_hat, delta = quantize(env.schema, stars[s], bits)
            shortfalls.append(oracle[s] - env.s_true(s[0], s[1], pi_hat))
            distortions.append(distance(env.schema, stars[s], pi_hat))
        bound = L * delta / 2 + L * grid_resolution / 2
        mean_sf = float(np.mean(shortfalls))
        worst = max(worst, mean_sf - bound)
        rows.append({"bits": bits, "delta": delta, "mean_shortfall": mean_sf, "bound": bound,
                     "mean_distortion": float(np.mean(distortions))})
    res.add("mean shortfall minus L*delta/2 + grid slack (worst config)", worst, 0.0)
    # any tuner: shortfall against the true optimum is at most L times its distortion
    tuners = {
        "defaults": lambda s: env.pi0,
        "hint": lambda s: env.hint_vector(s[1]),
        "projected-noise": lambda s: project_trust_region(env.schema, sample_controls(env.schema, rng), env.pi0, r),
    }
    for name, tuner in tuners.items():
        gap = []
        for s in states:
            pi_hat = tuner(s)
            sf = env.s_max(s[0]) - env.s_true(s[0], s[1], pi_hat)
            gap.append(sf - L * distance(env.schema, stars[s], pi_hat))
        res.add(f"tuner {name}: mean shortfall minus L*mean distortion", float(np.mean(gap)), 1e-12)
    res.info["rows"] = rows
    return res


# -- carve-out --------------------------------------------------------------


def carveout(
    rho: float = 0.2,
    gamma: float = 0.5,
    alpha: float = 0.9,
    eta: float = 0.05,
    c_call_mean: float = 0.02,
    c_fixed: float = 0.005,
    n_states: int = 20_000,
    audit_states: int = 1000,
    seed: int = 0,
) -> SuiteResult:
    res = SuiteResult("carve-out")
    world = CarveoutWorld(rho, gamma, seed=seed)
    est = CarveoutEstimate(alpha, eta, rho, gamma, world.harm, c_call_mean, c_fixed)
    bound, deploy = carveout_advantage(est)
    mean, se = world.simulate_gate(alpha, eta, c_call_mean, c_fixed, n_states, sim_seed=seed)
    res.add("bound minus (simulated gain + 3 se)", bound - (mean + 3 * se), 0.0)
    frac, min_sup = world.audit(audit_states)
    res.add("audited slice fraction vs rho (3 sd)", abs(frac - rho), 3 * math.sqrt(max(rho * (1 - rho), 1e-12) / audit_states))
    if rho > 0:
        res.add("in-slice sup advantage short of gamma", gamma - min_sup, 1e-9)
    null = CarveoutWorld(0.0, gamma, seed=seed)
    null_bound, null_deploy = carveout_advantage(CarveoutEstimate(alpha, eta, 0.0, gamma, null.harm, c_call_mean, c_fixed))
    res.add("deploy decision with rho=0 (1 = deploy)", float(null_deploy), 0.0)
    off_default = 0
    for i in range(min(audit_states, 200)):
        best, _ = null.best_control(i)
        off_default += best.to_dict() != null.pi0.to_dict()
    res.add("rho=0 grid optimum differs from defaults (count)", off_default, 0)
    res.info.update(bound=bound, deploy=deploy, simulated=mean, se=se, audit_fraction=frac, null_bound=null_bound)
    return res


# -- compute accounting -----------------------------------------------------


def reachable_max(schema: ControlSchema, pi0: ControlVector, r: float, name: str) -> int:
    f = schema.field(name)
    return int(min(f.upper, math.floor(pi0[name] + r * f.span + 1e-9)))


def compute_accounting(runs: Sequence[tuple[RunResult, int, int]]) -> SuiteResult:
    """Each entry is (run, per-depth quota cap, per-depth bundle-size cap)."""
    res = SuiteResult("compute-accounting")
    over_bound = outside = above_cap = 0
    for run, b, g in runs:
        budget = run.header["budget"]
        D = budget["depth_cap"]
        bound = expansion_bound([b] * D, [g] * D)
        count = run.end["generated"]
        total = run.end["cost_total"]
        low, high = total_compute_envelope(count, budget["c_min"], budget["c_max"])
        _, cap = total_compute_envelope(bound, budget["c_min"], budget["c_max"])
        over_bound += count > bound
        outside += not (low <= total <= high)
        above_cap += total > cap
    res.add("runs with candidates above the expansion bound", over_bound, 0)
    res.add("runs with cost outside [c_min, c_max] x candidates", outside, 0)
    res.add("runs with cost above c_max x bound", above_cap, 0)
    res.info["runs"] = len(runs)
    return res


# -- driver -----------------------------------------------------------------


def _policy_caps(cfg: Any, world: Any) -> tuple[int, int]:
    """Largest branch quota and bundle size the policy can ever apply."""
    from .baseline import cot_controls, tot_controls

    fixed = {"constant_cot": cot_controls, "baseline_cot": cot_controls,
             "constant_tot": tot_controls, "baseline_tot": tot_controls}
    if cfg.policy in fixed:
        pi = fixed[cfg.policy](world.schema)
        return int(pi["branch_quota"]), int(pi["gen_count"])
    pi0 = world.schema.defaults()
    return (reachable_max(world.schema, pi0, cfg.trust_radius, "branch_quota"),
            reachable_max(world.schema, pi0, cfg.trust_radius, "gen_count"))


def search_matrix(cfg: Any, policies: Sequence[str] = ("nlel_jpe", "random_labels", "constant_cot", "constant_tot")):
    """Runs of every policy over ``cfg``'s seeds and instances, plus annealing-off variants."""
    from .runner import execute, load_world

    world = load_world(cfg)
    runs, off_const, off_any = [], [], []
    for policy in policies:
        variant = cfg.replace(policy=policy)
        caps = _policy_caps(variant, world)
        out = execute(variant, world, write=False)
        runs.extend((out.results[k], *caps) for k in sorted(out.results))
        cold = execute(variant.replace(anneal=False), world, write=False)
        target = off_const if policy.startswith(("constant", "baseline")) else off_any
        target.extend(cold.results[k] for k in sorted(cold.results))
    return runs, off_const, off_any


SUITES = (
    "anytime-monotonicity",
    "trust-region-swing",
    "verification-error",
    "beta-annealing",
    "structured-diversity",
    "distortion-shortfall",
    "carve-out",
    "compute-accounting",
)


def check_theory(cfg: Any = None, suites: Sequence[str] = SUITES, quick: bool = False) -> list[SuiteResult]:
    """Run the named suites; ``quick`` shrinks sample sizes for smoke runs."""
    from .runner import RunConfig

    cfg = cfg or RunConfig(seeds=(0, 1), instances=6)
    unknown = sorted(set(suites) - set(SUITES))
    if unknown:
        raise ValueError(f"unknown suites: {unknown}")
    scale = 10 if quick else 1
    out: list[SuiteResult] = []
    matrix = None
    for name in suites:
        if name == "anytime-monotonicity":
            out.append(anytime_monotonicity(10_000 // scale))
        elif name == "trust-region-swing":
            out.append(trust_region_swing(10_000 // scale, r=cfg.trust_radius))
        elif name == "verification-error":
            out.append(verification_error(n=100_000 // scale))
        elif name == "structured-diversity":
            out.append(structured_diversity(trials=100_000 // scale))
        elif name == "distortion-shortfall":
            out.append(distortion_shortfall(n_states=60 // scale or 1))
        elif name == "carve-out":
            out.append(carveout(n_states=20_000 // scale, audit_states=1000 // scale))
        else:
            if matrix is None:
                matrix = search_matrix(cfg)
            runs, off_const, off_any = matrix
            if name == "beta-annealing":
                res = beta_annealing([r for r, _, _ in runs] + off_any, off_const)
            else:
                res = compute_accounting(runs)
            out.append(res)
    return out


def format_results(results: Sequence[SuiteResult]) -> str:
    lines = []
    for res in results:
        lines.append(f"[{'PASS' if res.passed else 'FAIL'}] {res.suite}")
        lines.extend("    " + c.line() for c in res.checks)
        for key, value in res.info.items():
            if key != "rows" and not isinstance(value, dict):
                lines.append(f"    info {key}={value}")
        for row in res.info.get("rows", []) if res.suite == "distortion-shortfall" else []:
            lines.append(f"    row bits={row['bits']} delta={row['delta']:.4f} "
                         f"shortfall={row['mean_shortfall']:.4f} bound={row['bound']:.4f}")
    return "\n".join(lines)
