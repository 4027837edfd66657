"""A seeded pseudo-LM world with known ground truth.

Candidate scores respond to the applied controls through a cone
``S_true(x, Pi) = S_max(x) - L_lip * d(Pi, Pi*(x))``, so the Lipschitz
constant is exact. Labels select archetypes with known tail rates at a
threshold ``tau``. Also provides the planted carve-out world and a
brute-force grid oracle over the trust region.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .adapter import GenerationRequest, Usage
from .policies import Label
from .rng import rng_for, unit_float
from .schema import (
    ControlSchema,
    ControlVector,
    FieldSpec,
    _field_coords,
    canonical_schema,
    distance,
    to_wire,
)

GRID_LIMIT = 10_000_000


@dataclass(frozen=True)
class Archetype:
    name: str
    pattern: str | None
    tail_rate: float
    mu_mean: float = 0.0
    mu_spread: float = 0.05
    sigma_mean: float = 0.1
    fill: float = 0.5
    pi_hint: Mapping[str, float] = field(default_factory=dict)  # normalized offsets from the defaults
    valid_rate: float = 0.6  # chance a below-threshold step is still sound, at the optimum

    def __post_init__(self) -> None:
        if not (0.0 <= self.tail_rate <= 1.0 and 0.0 <= self.valid_rate <= 1.0):
            raise ValueError(f"{self.name}: tail_rate and valid_rate must lie in [0, 1]")
        if self.mu_spread < 0 or self.sigma_mean < 0 or not 0.0 < self.fill <= 1.0:
            raise ValueError(f"{self.name}: spreads must be non-negative and fill in (0, 1]")

    def matches(self, text: str) -> bool:
        return self.pattern is not None and re.search(self.pattern, text, re.IGNORECASE) is not None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "pattern": self.pattern,
            "tail_rate": self.tail_rate,
            "mu_mean": self.mu_mean,
            "mu_spread": self.mu_spread,
            "sigma_mean": self.sigma_mean,
            "fill": self.fill,
            "pi_hint": dict(self.pi_hint),
            "valid_rate": self.valid_rate,
        }


NEUTRAL = Archetype("neutral", None, 0.12, mu_mean=-0.02, valid_rate=0.55)


@dataclass(frozen=True)
class EnvSpec:
    archetypes: tuple[Archetype, ...] = (NEUTRAL,)
    lipschitz: float = 2.0
    tau: float = 0.85
    seed: int = 0
    s_max: float = 0.7
    s_max_spread: float = 0.1
    pi_star_radius: float = 0.04
    prompt_tokens: int = 24
    verify_tokens: int = 8
    cost_coeffs: Mapping[str, float] = field(default_factory=lambda: {"base": 4.0})

    def __post_init__(self) -> None:
        object.__setattr__(self, "archetypes", tuple(self.archetypes))
        if self.lipschitz <= 0:
            raise ValueError("lipschitz must be positive")
        if self.pi_star_radius < 0:
            raise ValueError("pi_star_radius must be non-negative")
        names = [a.name for a in self.archetypes]
        if len(set(names)) != len(names):
            raise ValueError("archetype names must be unique")
        unknown = set(self.cost_coeffs) - {"base", "gen_count", "max_tokens", "verify_passes", "retrieval_mass"}
        if unknown:
            raise ValueError(f"unknown cost coefficients: {sorted(unknown)}")

    @property
    def fallback(self) -> Archetype:
        for a in self.archetypes:
            if a.pattern is None:
                return a
        return NEUTRAL

    def archetype(self, name: str) -> Archetype:
        for a in self.archetypes:
            if a.name == name:
                return a
        raise KeyError(name)

    def archetype_for(self, text: str) -> Archetype:
        """First archetype whose pattern matches; unknown labels get the neutral one."""
        for a in self.archetypes:
            if a.matches(text):
                return a
        return self.fallback

    def to_dict(self) -> dict:
        return {
            "archetypes": [a.to_dict() for a in self.archetypes],
            "lipschitz": self.lipschitz,
            "tau": self.tau,
            "seed": self.seed,
            "s_max": self.s_max,
            "s_max_spread": self.s_max_spread,
            "pi_star_radius": self.pi_star_radius,
            "prompt_tokens": self.prompt_tokens,
            "verify_tokens": self.verify_tokens,
            "cost_coeffs": dict(self.cost_coeffs),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> EnvSpec:
        d = dict(d)
        archetypes = tuple(Archetype(**a) for a in d.pop("archetypes", [NEUTRAL.to_dict()]))
        return cls(archetypes=archetypes, **d)

    def digest(self) -> str:
        body = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(body.encode()).hexdigest()[:16]

    def with_seed(self, seed: int) -> EnvSpec:
        return EnvSpec.from_dict({**self.to_dict(), "seed": seed})


def load_env_spec(path: str | Path) -> EnvSpec:
    return EnvSpec.from_dict(json.loads(Path(path).read_text()))


def default_env_spec() -> EnvSpec:
    text = resources.files("nlel").joinpath("data/env_default.json").read_text()
    return EnvSpec.from_dict(json.loads(text))


def state_key(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Draft:
    """A generated candidate before the engine assigns it an id."""

    text: str
    mu: float
    sigma: float
    correct: bool
    crossed: bool = False

    @property
    def key(self) -> str:
        return self.text


@dataclass(frozen=True)
class Bundle:
    drafts: tuple[Draft, ...]
    usage: tuple[Usage, ...]


def sample_scores(
    arch: Archetype, s_true: float, s_max: float, tau: float, size: int | tuple[int, ...], rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Draw (mu, sigma, crossed) for ``size`` candidates.

    A candidate crosses the threshold with probability
    ``tail_rate * S_true / S_max`` (exactly ``tail_rate`` at the optimum);
    crossed candidates have ``mu >= tau`` and the rest ``mu < tau``.
    """
    p = arch.tail_rate * min(max(s_true / s_max, 0.0), 1.0) if s_max > 0 else 0.0
    u = rng.random(size)
    z = rng.standard_normal(size)
    crossed = u < p
    base = s_true + arch.mu_mean + arch.mu_spread * z
    above = tau + np.abs(arch.mu_spread * z)
    mu = np.where(crossed, above, np.minimum(base, np.nextafter(tau, -np.inf)))
    sigma = arch.sigma_mean * (0.5 + rng.random(size))
    return mu, sigma, crossed


def tail_probability_rates(rates: Sequence[float], counts: Sequence[int]) -> tuple[float, float]:
    """Exact ``1 - prod (1-p)^n`` and the pooled lower bound ``1 - (1-p_bar)^N``."""
    if len(rates) != len(counts):
        raise ValueError("rates and counts differ in length")
    if any(n < 0 for n in counts) or any(not 0.0 <= p <= 1.0 for p in rates):
        raise ValueError("counts must be non-negative and rates in [0, 1]")
    total = sum(counts)
    if total < 1:
        raise ValueError("allocation must contain at least one draw")
    miss = 1.0
    for p, n in zip(rates, counts):
        miss *= (1.0 - p) ** n
    exact = 1.0 - miss
    p_bar = sum(p * n for p, n in zip(rates, counts)) / total
    lower = 1.0 - (1.0 - p_bar) ** total
    assert exact >= lower - 1e-12, (exact, lower)
    return exact, lower


class SyntheticEnv:
    """Immutable environment; every draw is keyed by (seed, state, call)."""

    backend_id = "synthetic"

    def __init__(self, spec: EnvSpec, schema: ControlSchema | None = None):
        self.spec = spec
        self.schema = schema or canonical_schema()
        self.pi0 = self.schema.defaults()
        for a in spec.archetypes:
            for name in a.pi_hint:
                if name in self.schema and self.schema.field(name).kind != "continuous":
                    raise ValueError(f"{a.name}: hints apply to continuous fields only ({name})")

    # -- ground truth ---------------------------------------------------------

    def s_max(self, key: str) -> float:
        return self.spec.s_max + self.spec.s_max_spread * (unit_float(self.spec.seed, "s_max", key) - 0.5)

    def pi_star(self, key: str, arch: Archetype | str) -> ControlVector:
        arch = self.spec.archetype(arch) if isinstance(arch, str) else arch
        values = self.pi0.to_dict()
        for spec in self.schema.fields:
            if spec.kind != "continuous":
                continue
            u0 = (values[spec.name] - spec.lower) / spec.span
            jitter = self.spec.pi_star_radius * (2.0 * unit_float(self.spec.seed, "pi_star", key, arch.name, spec.name) - 1.0)
            u = min(max(u0 + arch.pi_hint.get(spec.name, 0.0) + jitter, 0.0), 1.0)
            values[spec.name] = spec.lower + u * spec.span
        return ControlVector(values, "emitted", self.schema.version)

    def s_true(self, key: str, arch: Archetype | str, pi: ControlVector) -> float:
        return self.s_max(key) - self.spec.lipschitz * distance(self.schema, pi, self.pi_star(key, arch))

    def hint_vector(self, arch: Archetype | str) -> ControlVector:
        """The defaults shifted by an archetype's hint (its expected optimum)."""
        arch = self.spec.archetype(arch) if isinstance(arch, str) else arch
        values = self.pi0.to_dict()
        for name, offset in arch.pi_hint.items():
            if name not in self.schema:
                continue
            spec = self.schema.field(name)
            u = min(max((values[name] - spec.lower) / spec.span + offset, 0.0), 1.0)
            values[name] = spec.lower + u * spec.span
        return ControlVector(values, "emitted", self.schema.version)

    # -- generation -----------------------------------------------------------

    def root(self, instance: int) -> str:
        return f"problem-{instance:04d}"

    def describe(self) -> dict:
        return {"kind": "synthetic", "env_digest": self.spec.digest(), "env_seed": self.spec.seed}

    def candidate_cost(self, pi: ControlVector) -> float:
        """Raw (unclamped) compute cost of one candidate, linear in actuated fields."""
        c = self.spec.cost_coeffs
        weights = pi.get("retrieval_weights") or {}
        mass = sum(w for name, w in weights.items() if name != "none")
        return (
            c.get("base", 0.0)
            + c.get("gen_count", 0.0) * pi.get("gen_count", 1)
            + c.get("max_tokens", 0.0) * pi.get("max_tokens", 0)
            + c.get("verify_passes", 0.0) * pi.get("verify_passes", 0)
            + c.get("retrieval_mass", 0.0) * mass
        )

    def completion_tokens(self, arch: Archetype, max_tokens: int) -> int:
        return min(max_tokens, math.ceil(arch.fill * max_tokens))

    def gen_bundle(
        self,
        parent_text: str,
        depth: int,
        label: Label,
        pi: ControlVector,
        count: int,
        state_seed: int,
        retrieved: Sequence[str] = (),
    ) -> Bundle:
        if count < 1:
            raise ValueError("count must be >= 1")
        arch = self.spec.archetype_for(label.text)
        key = state_key(parent_text)
        smax = self.s_max(key)
        st = smax - self.spec.lipschitz * distance(self.schema, pi, self.pi_star(key, arch))
        rng = rng_for(self.spec.seed, "bundle", state_seed)
        mu, sigma, crossed = sample_scores(arch, st, smax, self.spec.tau, count, rng)
        # sound steps: every threshold crossing, plus a control-sensitive share of the rest
        sound = crossed | (rng.random(count) < arch.valid_rate * min(max(st / smax, 0.0), 1.0))
        tags = rng.integers(0, 2**32, size=count)
        drafts = tuple(
            Draft(
                f"d{depth + 1}:{arch.name}:{int(tags[i]):08x}",
                float(mu[i]),
                float(sigma[i]),
                bool(sound[i]),
                bool(crossed[i]),
            )
            for i in range(count)
        )
        per = self.completion_tokens(arch, int(pi["max_tokens"]))
        prompt = self.spec.prompt_tokens + len(label.text.split()) + sum(len(s.split()) for s in retrieved)
        return Bundle(drafts, (Usage("generator", prompt, per * count, self.backend_id),))

    # -- structured diversity -------------------------------------------------

    def tail_probability(self, allocation: Mapping[str, int]) -> tuple[float, float]:
        """Crossing probability of the best of an allocation of draws at the optimum.

        Keys are archetype names or label texts.
        """
        names = {a.name for a in self.spec.archetypes}
        rates, counts = [], []
        for label, n in allocation.items():
            arch = self.spec.archetype(label) if label in names else self.spec.archetype_for(label)
            rates.append(arch.tail_rate)
            counts.append(n)
        return tail_probability_rates(rates, counts)


# -- brute-force oracle ------------------------------------------------------


class GridTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class GridAxis:
    spec: FieldSpec
    values: tuple[Any, ...]
    coords: np.ndarray  # normalized coordinate per value (1-D); simplex fields are fixed


def trust_region_axes(
    schema: ControlSchema, pi0: ControlVector, r: float, resolution: float
) -> list[GridAxis]:
    """Per-field candidate values inside the trust region.

    Continuous fields step by ``resolution`` (normalized units) outward from
    the default and always include the region's edges; integer, boolean and
    enum fields are enumerated; simplex fields stay at the default.
    """
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    axes = []
    for spec in schema.fields:
        v0 = pi0[spec.name]
        if spec.kind == "continuous":
            u0 = (v0 - spec.lower) / spec.span
            lo, hi = max(0.0, u0 - r), min(1.0, u0 + r)
            k = int(math.floor(r / resolution + 1e-9))
            us = {u0} | {min(max(u0 + j * resolution, lo), hi) for j in range(-k, k + 1)} | {lo, hi}
            us = sorted(us)
            values = tuple(spec.lower + u * spec.span if u != u0 else v0 for u in us)
            axes.append(GridAxis(spec, values, np.array(us)))
        elif spec.kind == "integer":
            lo = max(spec.lower, v0 - r * spec.span)
            hi = min(spec.upper, v0 + r * spec.span)
            ints = list(range(int(math.ceil(lo - 1e-9)), int(math.floor(hi + 1e-9)) + 1))
            axes.append(GridAxis(spec, tuple(ints), np.array([(i - spec.lower) / spec.span for i in ints])))
        elif spec.kind == "boolean":
            vals = [v0] if r < 1.0 else [False, True]
            axes.append(GridAxis(spec, tuple(vals), np.array([float(v) for v in vals])))
        elif spec.kind == "enum":
            n = len(spec.choices)
            i0 = spec.choices.index(v0)
            reach = r * (n - 1)
            idx = [i for i in range(n) if abs(i - i0) <= reach + 1e-9]
            axes.append(GridAxis(spec, tuple(spec.choices[i] for i in idx), np.array([i / (n - 1) if n > 1 else 0.0 for i in idx])))
        else:
            axes.append(GridAxis(spec, (dict(v0),), np.zeros(1)))
    return axes


def grid_size(axes: Sequence[GridAxis]) -> int:
    return math.prod(len(a.values) for a in axes)


def _broadcast(axes: Sequence[GridAxis], per_axis: Sequence[np.ndarray]) -> list[np.ndarray]:
    n = len(axes)
    return [arr.reshape([-1 if j == i else 1 for j in range(n)]) for i, arr in enumerate(per_axis)]


def linf_to_point(schema: ControlSchema, axes: Sequence[GridAxis], target: ControlVector) -> np.ndarray:
    """l-infinity distance from every grid point to ``target`` (an n-d array)."""
    parts = []
    for axis in axes:
        if axis.spec.kind == "simplex_weights":
            t = np.array([target[axis.spec.name][c] for c in axis.spec.choices])
            w = np.array([axis.values[0][c] for c in axis.spec.choices])
            parts.append(np.array([float(np.max(np.abs(w - t)))]))
        else:
            t = _field_coords(axis.spec, target[axis.spec.name])[0]
            parts.append(np.abs(axis.coords - t))
    out = np.zeros([1] * len(axes))
    for part in _broadcast(axes, parts):
        out = np.maximum(out, part)
    return out


def brute_force_best_control(
    schema: ControlSchema,
    pi0: ControlVector,
    r: float,
    grid_resolution: float,
    score: Callable[[Sequence[GridAxis]], np.ndarray],
) -> tuple[ControlVector, float]:
    """Exhaustive argmax of ``score`` over the trust-region grid.

    ``score(axes)`` returns an array broadcastable to the grid shape. Ties go
    to the point nearest the defaults, then to the lowest grid index.
    Grids above ten million points are refused.
    """
    axes = trust_region_axes(schema, pi0, r, grid_resolution)
    size = grid_size(axes)
    if size > GRID_LIMIT:
        shape = " x ".join(f"{a.spec.name}:{len(a.values)}" for a in axes)
        raise GridTooLarge(f"grid has {size} points ({shape}); limit is {GRID_LIMIT}")
    shape = tuple(len(a.values) for a in axes)
    values = np.broadcast_to(score(axes), shape).ravel()
    near = np.broadcast_to(linf_to_point(schema, axes, pi0), shape).ravel()
    best = values.max()
    ties = np.flatnonzero(values >= best - 1e-12)
    pick = ties[np.argmin(near[ties])]
    idx = np.unravel_index(pick, shape)
    chosen = {
        a.spec.name: (dict(a.values[i]) if isinstance(a.values[i], dict) else a.values[i]) for a, i in zip(axes, idx)
    }
    return ControlVector(chosen, "emitted", schema.version), float(values[pick])


def cone_score(axes: Sequence[GridAxis], schema: ControlSchema, s_max: float, L_lip: float, star: ControlVector) -> np.ndarray:
    return s_max - L_lip * linf_to_point(schema, axes, star)


def env_best_control(
    env: SyntheticEnv, key: str, arch: Archetype | str, r: float = 0.15, grid_resolution: float = 0.025
) -> tuple[ControlVector, float]:
    """Grid oracle for one environment state."""
    star = env.pi_star(key, arch)
    smax = env.s_max(key)
    return brute_force_best_control(
        env.schema, env.pi0, r, grid_resolution, lambda axes: cone_score(axes, env.schema, smax, env.spec.lipschitz, star)
    )


# -- planted carve-out -------------------------------------------------------


def oracle_schema() -> ControlSchema:
    """A two-field schema small enough for exhaustive grids."""
    return ControlSchema(
        (
            FieldSpec("temperature", "continuous", 0.0, 2.0, 0.7, quant_bits=3),
            FieldSpec("top_p", "continuous", 0.05, 1.0, 0.95, quant_bits=3),
        ),
        "oracle-v1",
    )


def shortfall_schema() -> ControlSchema:
    """Three continuous fields plus one enumerated integer, for grid oracles."""
    return ControlSchema(
        (
            FieldSpec("temperature", "continuous", 0.0, 2.0, 0.7, quant_bits=3),
            FieldSpec("top_p", "continuous", 0.05, 1.0, 0.95, quant_bits=3),
            FieldSpec("verify_passes", "integer", 0, 4, 1),
            FieldSpec("verify_strictness", "continuous", 0.0, 1.0, 0.5, quant_bits=2),
        ),
        "oracle-v2",
    )


@dataclass(frozen=True)
class CarveoutWorld:
    """States of which a fraction ``rho`` gain ``gamma`` from one fixed deviation.

    Deviating costs ``delta_cost`` per unit of radius used. In-slice states
    have their optimum exactly one radius away along the deviation; the rest
    have their optimum at the defaults, so a misfired deviation loses ``M``.
    """

    rho: float
    gamma: float
    seed: int = 0
    r: float = 0.15
    lam: float = 0.5
    delta_cost: float = 0.2
    s_max: float = 0.7
    noise: float = 0.05
    schema: ControlSchema = field(default_factory=oracle_schema)

    def __post_init__(self) -> None:
        if not 0.0 <= self.rho <= 1.0 or self.gamma < 0:
            raise ValueError("need rho in [0, 1] and gamma >= 0")
        if not 0.0 < self.r <= 1.0:
            raise ValueError("carve-out world needs a positive radius")

    @property
    def L_lip(self) -> float:
        return (self.gamma + self.lam * self.delta_cost) / self.r

    @property
    def harm(self) -> float:
        """Loss of deploying the deviation on an out-of-slice state."""
        return self.L_lip * self.r + self.lam * self.delta_cost

    @property
    def pi0(self) -> ControlVector:
        return self.schema.defaults()

    def deviation(self) -> ControlVector:
        spec = self.schema.field("temperature")
        return self.pi0.replace("emitted", temperature=self.pi0["temperature"] + self.r * spec.span)

    def in_slice(self, state: int) -> bool:
        return unit_float(self.seed, "carveout-slice", state) < self.rho

    def pi_star(self, state: int) -> ControlVector:
        return self.deviation() if self.in_slice(state) else self.pi0

    def cost(self, pi: ControlVector) -> float:
        return self.delta_cost * distance(self.schema, pi, self.pi0) / self.r

    def s_true(self, state: int, pi: ControlVector) -> float:
        return self.s_max - self.L_lip * distance(self.schema, pi, self.pi_star(state))

    def advantage(self, state: int, pi: ControlVector) -> float:
        base = self.s_true(state, self.pi0)
        return self.s_true(state, pi) - base - self.lam * (self.cost(pi) - self.cost(self.pi0))

    def _objective_grid(self, state: int):
        star = self.pi_star(state)

        def score(axes: Sequence[GridAxis]) -> np.ndarray:
            gap = linf_to_point(self.schema, axes, star)
            dev = linf_to_point(self.schema, axes, self.pi0)
            return self.s_max - self.L_lip * gap - self.lam * self.delta_cost * dev / self.r

        return score

    def best_control(self, state: int, grid_resolution: float = 0.0075) -> tuple[ControlVector, float]:
        """Grid optimum of score minus cost inside the trust region."""
        return brute_force_best_control(self.schema, self.pi0, self.r, grid_resolution, self._objective_grid(state))

    def sup_advantage(self, state: int, grid_resolution: float = 0.0075) -> float:
        _, best = self.best_control(state, grid_resolution)
        return best - (self.s_true(state, self.pi0) - self.lam * self.cost(self.pi0))

    def audit(self, n_states: int, grid_resolution: float = 0.0075) -> tuple[float, float]:
        """(in-slice fraction, smallest in-slice sup advantage) by exhaustive search."""
        sups = [self.sup_advantage(i, grid_resolution) for i in range(n_states)]
        inside = [s for s in sups if s >= self.gamma - 1e-9]
        return len(inside) / n_states, min(inside, default=float("nan"))

    def simulate_gate(
        self,
        alpha: float,
        eta: float,
        c_call_mean: float,
        c_fixed: float,
        n_states: int,
        sim_seed: int = 0,
    ) -> tuple[float, float]:
        """Mean and standard error of the per-state objective change from a gated deviation.

        The gate fires on in-slice states with probability ``alpha`` and on the
        rest with ``eta``; each firing pays a call cost uniform on ``[0, 2 c_call_mean]``.
        """
        rng = rng_for(self.seed, "carveout-sim", sim_seed)
        dev = self.deviation()
        gains = np.empty(n_states)
        for i in range(n_states):
            state = n_states * (sim_seed + 1) + i
            inside = self.in_slice(state)
            fires = rng.random() < (alpha if inside else eta)
            call = rng.uniform(0.0, 2.0 * c_call_mean)
            noise = self.noise * (rng.standard_normal() - rng.standard_normal()) / math.sqrt(2.0)
            g = -c_fixed
            if fires:
                g += self.advantage(state, dev) - call + noise
            gains[i] = g
        return float(gains.mean()), float(gains.std(ddof=1) / math.sqrt(n_states))


# -- scripted policy backends ------------------------------------------------

DIRECTIVES = (
    "work backward from the goal",
    "seek a counterexample",
    "recall a known lemma",
    "continue",
)


def directive_labeller(directives: Sequence[str] = DIRECTIVES) -> Callable[[GenerationRequest, Any], str]:
    """Responder for a mock labeller backend: ``m`` directives in seeded order."""

    def respond(req: GenerationRequest, rng: Any) -> str:
        match = re.search(r"up to (\d+)", req.prompt)
        m = int(match.group(1)) if match else 1
        order = list(directives)
        rng.shuffle(order)
        return "\n".join(order[:m])

    return respond


def hinting_tuner(env: SyntheticEnv, **overrides: Any) -> Callable[[GenerationRequest, Any], str]:
    """Responder for a mock parameter-emitter backend that knows each
    archetype's expected optimum and replies with it as JSON."""

    def respond(req: GenerationRequest, rng: Any) -> str:
        labels = re.findall(r"^label: (.*)$", req.prompt, re.MULTILINE)
        arch = env.spec.archetype_for(labels[-1] if labels else "")
        pi = env.hint_vector(arch)
        if overrides:
            pi = pi.replace(**overrides)
        return to_wire(pi)

    return respond
