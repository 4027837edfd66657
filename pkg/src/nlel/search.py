"""Labelled tree search: expansion, top-k selection, annealing, budgets and compute accounting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Protocol, Sequence

from .adapter import AdapterError, Backend, GenerationRequest, MockRetrieval, Usage, decoding_from
from .context import BudgetCounters, ContextSnapshot, summarize
from .ledger import LedgerRow, parent_digest
from .policies import Label, Labeller, Tuner, emit_labels, load_template, render_template
from .rng import derive_seed
from .schema import NO_RETRIEVAL, ControlSchema, ControlVector, project_trust_region_report, quantize
from .synthetic import Bundle, Draft
from .verification import VerifierBackend, VerifierConfig, run_passes

STATUSES = ("frontier", "expanded", "pruned", "terminal")


def score(mu: float, sigma: float, beta: float) -> float:
    if sigma < 0 or beta < 0:
        raise ValueError("sigma and beta must be non-negative")
    return mu + beta * sigma


def anneal_beta(beta0: float, depth: int, gamma_a: float = 0.7) -> float:
    """Geometric exploration schedule ``beta0 * gamma_a**depth``."""
    if beta0 < 0 or depth < 0 or not 0.0 < gamma_a <= 1.0:
        raise ValueError("need beta0 >= 0, depth >= 0 and gamma_a in (0, 1]")
    return beta0 * gamma_a**depth


def select_topk(
    candidates: Sequence[tuple[int, float, float]], k: int, beta: float
) -> list[tuple[int, float, float]]:
    """The ``k`` best ``(id, mu, sigma)`` by ``mu + beta*sigma``; ties go to the lower id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ranked = sorted(candidates, key=lambda c: (-score(c[1], c[2], beta), c[0]))
    return ranked[:k]


def expansion_bound(branch_quotas: Sequence[int], bundle_sizes: Sequence[int]) -> int:
    """Worst-case generated-candidate count for per-depth quotas ``b`` and bundle sizes ``g``."""
    if len(branch_quotas) != len(bundle_sizes):
        raise ValueError("need one bundle size per depth")
    if any(b < 1 for b in branch_quotas) or any(g < 1 for g in bundle_sizes):
        raise ValueError("quotas and bundle sizes must be >= 1")
    total, width = 0, 1
    for b, g in zip(branch_quotas, bundle_sizes):
        total += width * b * g
        width *= b
    return total


def total_compute_envelope(bound: int, c_min: float, c_max: float) -> tuple[float, float]:
    if bound < 0 or c_min < 0 or c_min > c_max:
        raise ValueError("need bound >= 0 and 0 <= c_min <= c_max")
    return (c_min * bound, c_max * bound)


@dataclass
class Node:
    id: int
    text: str
    depth: int
    mu: float
    sigma: float
    status: str = "frontier"
    parent_id: int | None = None
    label: str | None = None
    correct: bool = False
    final: bool = False
    S: float = 0.0
    pi_in: ControlVector | None = None
    beta_cap: float = math.inf

    def __post_init__(self) -> None:
        if self.sigma < 0 or self.depth < 0:
            raise ValueError("sigma and depth must be non-negative")
        if self.status not in STATUSES:
            raise ValueError(f"unknown status {self.status!r}")


@dataclass(frozen=True)
class Edge:
    parent_id: int
    child_id: int
    label: str
    pi_emitted: ControlVector
    pi_applied: ControlVector
    tokens_spent: int

    def __post_init__(self) -> None:
        if self.tokens_spent < 0:
            raise ValueError("tokens_spent must be non-negative")


@dataclass(frozen=True)
class RunBudget:
    token_limit: int
    expansion_cap: int
    depth_cap: int
    c_min: float = 1.0
    c_max: float = 100.0

    def __post_init__(self) -> None:
        if min(self.token_limit, self.expansion_cap, self.depth_cap) <= 0 or self.c_min <= 0:
            raise ValueError("budgets must be positive")
        if self.c_min > self.c_max:
            raise ValueError("c_min must not exceed c_max")

    def scaled(self, multiplier: float) -> RunBudget:
        return RunBudget(
            max(1, int(round(self.token_limit * multiplier))), self.expansion_cap, self.depth_cap, self.c_min, self.c_max
        )

    def to_dict(self) -> dict:
        return {
            "token_limit": self.token_limit,
            "expansion_cap": self.expansion_cap,
            "depth_cap": self.depth_cap,
            "c_min": self.c_min,
            "c_max": self.c_max,
        }


@dataclass(frozen=True)
class EngineConfig:
    trust_radius: float = 0.15
    gamma_a: float = 0.7
    verify_mode: str = "independent"
    verify_tokens_per_pass: int = 8
    quant_bits: Mapping[str, int] | None = None  # quantize emitted controls before projection


class Generator(Protocol):
    def root(self, instance: int) -> str: ...

    def candidate_cost(self, pi: ControlVector) -> float: ...

    def describe(self) -> dict: ...

    def gen_bundle(
        self, parent_text: str, depth: int, label: Label, pi: ControlVector, count: int, state_seed: int,
        retrieved: Sequence[str] = (),
    ) -> Bundle: ...


class BackendGenerator:
    """Generation through a text backend; values come from an injected estimator."""

    def __init__(
        self,
        backend: Backend,
        value_fn: Callable[[str], tuple[float, float, bool]],
        cost_fn: Callable[[ControlVector], float] | None = None,
        template: str | None = None,
    ):
        self.backend = backend
        self.value_fn = value_fn
        self.cost_fn = cost_fn or (lambda pi: float(pi["max_tokens"]))
        self.template = template or load_template("child_v1")

    def root(self, instance: int) -> str:
        return f"problem-{instance:04d}"

    def candidate_cost(self, pi: ControlVector) -> float:
        return self.cost_fn(pi)

    def describe(self) -> dict:
        return {"kind": "backend", "backend_id": getattr(self.backend, "backend_id", "")}

    def gen_bundle(self, parent_text, depth, label, pi, count, state_seed, retrieved=()) -> Bundle:
        block = "RETRIEVED\n" + "\n".join(retrieved) + "\n" if retrieved else ""
        prompt = render_template(self.template, parent=parent_text, label=label.text, retrieved=block)
        resp = self.backend.complete(GenerationRequest(prompt, decoding_from(pi), n=count))
        drafts = []
        for text in resp.texts:
            mu, sigma, correct = self.value_fn(text)
            drafts.append(Draft(text, float(mu), float(sigma), bool(correct)))
        return Bundle(tuple(drafts), (resp.usage("generator"),))


@dataclass
class RunResult:
    header: dict
    events: list[dict]
    end: dict
    nodes: list[Node]
    edges: list[Edge]
    audits: list[dict] = field(default_factory=list)

    @property
    def records(self) -> list[dict]:
        return [self.header, *self.events, self.end]

    @property
    def solved(self) -> bool:
        return bool(self.end["solved"])

    @property
    def tokens_used(self) -> int:
        return int(self.end["tokens_used"])


def control_dict(pi: ControlVector) -> dict:
    return pi.to_dict()


def _context_record(ctx: ContextSnapshot) -> dict:
    # the cap lives in the header; leaving it out keeps budget-truncated runs prefix-identical
    d = ctx.to_dict()
    d.pop("token_budget")
    return d


def pick_answer(finals: Sequence[dict], others: Sequence[dict]) -> dict | None:
    """Best final node by mu (lowest id on ties), else the best other node."""
    for pool in (finals, others):
        if pool:
            return min(pool, key=lambda n: (-n["mu"], n["id"]))
    return None


class SearchEngine:
    """Breadth-first labelled tree search over one problem instance.

    Frontier order is (depth, -S, id). Labels per expansion follow the parent's
    incoming branch quota; survivors per expansion follow the largest quota
    among the applied controls of that expansion.
    """

    def __init__(
        self,
        schema: ControlSchema,
        generator: Generator,
        labeller: Labeller,
        tuner: Tuner,
        verifier: VerifierBackend,
        budget: RunBudget,
        config: EngineConfig = EngineConfig(),
        retrieval: MockRetrieval | None = None,
        pi0: ControlVector | None = None,
    ):
        schema.require_fields()
        self.schema = schema
        self.generator = generator
        self.labeller = labeller
        self.tuner = tuner
        self.verifier = verifier
        self.budget = budget
        self.config = config
        self.retrieval = retrieval
        self.pi0 = (pi0 or schema.defaults()).replace(provenance="default")

    def header(self, instance: int, seed: int) -> dict:
        return {
            "type": "header",
            "generator": self.generator.describe(),
            "seed": seed,
            "instance": instance,
            "schema_version": self.schema.version,
            "trust_radius": self.config.trust_radius,
            "gamma_a": self.config.gamma_a,
            "verify_mode": self.config.verify_mode,
            "pi0": control_dict(self.pi0),
            "budget": self.budget.to_dict(),
        }

    def _apply(self, pi: ControlVector) -> tuple[ControlVector, list[str]]:
        if self.config.quant_bits:
            pi, _ = quantize(self.schema, pi, self.config.quant_bits)
        report = project_trust_region_report(self.schema, pi, self.pi0, self.config.trust_radius)
        return report.result, list(report.moved)

    def run(self, instance: int, seed: int) -> RunResult:
        budget = self.budget
        root = Node(0, self.generator.root(instance), 0, 0.0, 0.0, pi_in=self.pi0)
        nodes: dict[int, Node] = {0: root}
        edges: list[Edge] = []
        frontier: list[int] = [0]
        history: list[str] = []
        events: list[dict] = []
        audits: list[dict] = []
        tokens = retrieval_calls = accepts = rejects = 0
        generated = expansions = 0
        cost_total = 0.0
        next_id = 1
        reason = "frontier-empty"

        while True:
            if not frontier:
                reason = "frontier-empty"
                break
            if expansions >= budget.expansion_cap:
                reason = "expansion-cap"
                break
            frontier.sort(key=lambda i: (nodes[i].depth, -nodes[i].S, i))
            parent = nodes[frontier[0]]
            siblings = [n for n in nodes.values() if n.parent_id == parent.parent_id and n.id != parent.id and n.id != 0]
            counters = BudgetCounters(tokens, budget.token_limit, retrieval_calls, accepts, rejects)
            ctx = summarize([nodes[i] for i in frontier], siblings, history, counters, depth=parent.depth)
            frontier.pop(0)
            seq = len(events)
            base_event = {
                "seq": seq,
                "parent_id": parent.id,
                "depth": parent.depth,
                "tokens_before": tokens,
                "context": _context_record(ctx),
            }

            if ctx.budget_exhausted:
                # no labeller or tuner call: the stop label and the defaults are forced
                lr = emit_labels(self.labeller, parent.text, ctx, 1)
                applied = self.pi0.replace(provenance="clamped_budget")
                events.append(
                    {
                        **base_event,
                        "type": "stop",
                        "labels": [lab.text for lab in lr.labels],
                        "stop": [True],
                        "pi_emitted": [None],
                        "pi_applied": [control_dict(applied)],
                        "provenance": [applied.provenance],
                        "projected": [[]],
                        "label_tokens": [0],
                        "candidates": [],
                        "survivors": [],
                        "beta_used": None,
                        "k": 0,
                        "tokens": 0,
                        "usage": [],
                        "failures": [],
                        "retrieval_calls": 0,
                    }
                )
                parent.status = "terminal"
                reason = "token-budget"
                break

            usages: list[Usage] = []
            failures: list[str] = []
            m = int(parent.pi_in["branch_quota"])
            lr = emit_labels(self.labeller, parent.text, ctx, m)
            usages.extend(lr.usage)
            if lr.failure:
                failures.append(lr.failure)

            label_rows = []
            pool: list[dict] = []
            drafts_by_id: dict[int, tuple[Draft, int, ControlVector]] = {}
            expansion_retrievals = 0
            for li, label in enumerate(lr.labels):
                row = {"label": label.text, "stop": label.is_stop, "emitted": None, "applied": None, "moved": [], "tokens": 0}
                label_rows.append(row)
                if label.is_stop:
                    continue
                label_usage: list[Usage] = []
                try:
                    tr = self.tuner.propose(parent.text, label, ctx)
                    emitted = tr.pi
                    label_usage.extend(tr.usage)
                    if tr.audit is not None:
                        audits.append({"seq": seq, "label_index": li, **tr.audit})
                except AdapterError as exc:
                    emitted = self.pi0
                    failures.append(f"label {li}: tuner backend failure: {exc}")
                applied, moved = self._apply(emitted)
                row.update(emitted=emitted, applied=applied, moved=moved)

                retrieved: tuple[str, ...] = ()
                weights = applied.get("retrieval_weights") or {}
                if self.retrieval is not None and any(w > 0 for c, w in weights.items() if c != NO_RETRIEVAL):
                    res = self.retrieval.retrieve(label.text, weights)
                    retrieved = res.snippets
                    label_usage.append(res.usage)
                    expansion_retrievals += 1

                state_seed = derive_seed(seed, instance, parent.id, li)
                try:
                    bundle = self.generator.gen_bundle(
                        parent.text, parent.depth, label, applied, int(applied["gen_count"]), state_seed, retrieved
                    )
                except AdapterError as exc:
                    failures.append(f"label {li}: generation failure: {exc}")
                    bundle = Bundle((), ())
                label_usage.extend(bundle.usage)

                vconfig = VerifierConfig.from_control(applied, self.config.verify_mode)
                unit_cost = min(max(self.generator.candidate_cost(applied), budget.c_min), budget.c_max)
                for draft in bundle.drafts:
                    cid = next_id
                    next_id += 1
                    verdict = run_passes(draft, vconfig, self.verifier)
                    label_usage.append(
                        Usage("verifier", 0, self.config.verify_tokens_per_pass * len(verdict.per_pass), "verifier")
                    )
                    accepts += verdict.accepted
                    rejects += not verdict.accepted
                    cost_total += unit_cost
                    generated += 1
                    drafts_by_id[cid] = (draft, li, applied)
                    pool.append(
                        {
                            "id": cid,
                            "label_index": li,
                            "text": draft.text,
                            "mu": draft.mu,
                            "sigma": draft.sigma,
                            "verified": verdict.accepted,
                            "passes": [p.accepted for p in verdict.per_pass],
                            "verify_errors": sum(p.error for p in verdict.per_pass),
                            "correct": draft.correct,
                            "final": parent.depth + 1 >= budget.depth_cap,
                            "cost": unit_cost,
                        }
                    )
                row["tokens"] = sum(u.total for u in label_usage)
                usages.extend(label_usage)

            active = [row["applied"] for row in label_rows if row["applied"] is not None]
            if active:
                beta_label = max(float(pi["beta"]) for pi in active)
                beta_used = min(parent.beta_cap, anneal_beta(beta_label, parent.depth + 1, self.config.gamma_a))
                k = max(int(pi["branch_quota"]) for pi in active)
            else:
                beta_used, k = None, 0
            for cand in pool:
                cand["S"] = score(cand["mu"], cand["sigma"], beta_used) if beta_used is not None else cand["mu"]
            eligible = [(c["id"], c["mu"], c["sigma"]) for c in pool if c["verified"]]
            survivors = [c[0] for c in select_topk(eligible, k, beta_used)] if eligible and k else []

            by_id = {c["id"]: c for c in pool}
            for cid in survivors:
                cand = by_id[cid]
                draft, li, applied = drafts_by_id[cid]
                child = Node(
                    cid,
                    draft.text,
                    parent.depth + 1,
                    draft.mu,
                    draft.sigma,
                    status="terminal" if cand["final"] else "frontier",
                    parent_id=parent.id,
                    label=label_rows[li]["label"],
                    correct=draft.correct,
                    final=cand["final"],
                    S=cand["S"],
                    pi_in=applied,
                    beta_cap=beta_used,
                )
                nodes[cid] = child
                if not child.final:
                    frontier.append(cid)
                row = label_rows[li]
                edges.append(Edge(parent.id, cid, row["label"], row["emitted"], applied, row["tokens"]))
            parent.status = "expanded" if survivors else "terminal"

            spent = sum(u.total for u in usages)
            tokens += spent
            retrieval_calls += expansion_retrievals
            expansions += 1
            history.extend(row["label"] for row in label_rows)
            events.append(
                {
                    **base_event,
                    "type": "expand",
                    "labels": [row["label"] for row in label_rows],
                    "stop": [row["stop"] for row in label_rows],
                    "pi_emitted": [control_dict(r["emitted"]) if r["emitted"] else None for r in label_rows],
                    "pi_applied": [control_dict(r["applied"]) if r["applied"] else None for r in label_rows],
                    "provenance": [r["applied"].provenance if r["applied"] else None for r in label_rows],
                    "projected": [r["moved"] for r in label_rows],
                    "label_tokens": [r["tokens"] for r in label_rows],
                    "candidates": pool,
                    "survivors": survivors,
                    "beta_used": beta_used,
                    "k": k,
                    "tokens": spent,
                    "usage": [u.to_dict() for u in usages],
                    "failures": failures,
                    "retrieval_calls": expansion_retrievals,
                }
            )
            if any(by_id[cid]["final"] for cid in survivors):
                reason = "final-answer"
                break

        made = [n for n in nodes.values() if n.id != 0]
        answer = pick_answer(
            [{"id": n.id, "mu": n.mu} for n in made if n.final], [{"id": n.id, "mu": n.mu} for n in made]
        )
        answer_node = nodes[answer["id"]] if answer else None
        end = {
            "type": "end",
            "reason": reason,
            "answer_id": answer_node.id if answer_node else None,
            "solved": bool(answer_node and answer_node.final and answer_node.correct),
            "tokens_used": tokens,
            "expansions": expansions,
            "generated": generated,
            "cost_total": cost_total,
            "verify_accepts": accepts,
            "verify_rejects": rejects,
        }
        return RunResult(self.header(instance, seed), events, end, list(nodes.values()), edges, audits)


def ledger_rows(result: RunResult) -> list[LedgerRow]:
    """One ledger row per tuned label of a finished run."""
    token_budget = result.header["budget"]["token_limit"]
    rows = []
    for ev in result.events:
        if ev["type"] != "expand":
            continue
        ctx = ContextSnapshot.from_dict({**ev["context"], "token_budget": token_budget})
        for li, label in enumerate(ev["labels"]):
            applied = ev["pi_applied"][li]
            if applied is None:
                continue
            cands = [c for c in ev["candidates"] if c["label_index"] == li]
            best = max((c["S"] for c in cands), default=0.0)
            ok = sum(c["verified"] for c in cands)
            pi = ControlVector(applied, ev["provenance"][li], result.header["schema_version"])
            rows.append(
                LedgerRow(
                    parent_digest=parent_digest(f"{result.header['instance']}:{ev['parent_id']}"),
                    label_text=label,
                    context=ctx,
                    pi_applied=pi,
                    outcome_S=float(best),
                    success=any(c["verified"] and c["correct"] for c in cands),
                    cost_tokens=int(ev["label_tokens"][li]),
                    verify_record=(ok, len(cands) - ok),
                )
            )
    return rows


def check_tree(result: RunResult) -> list[str]:
    """Structural problems in a finished run (empty when well formed)."""
    problems = []
    nodes = {n.id: n for n in result.nodes}
    for n in result.nodes:
        if n.id == 0:
            if n.depth != 0:
                problems.append("root depth is not zero")
            continue
        parent = nodes.get(n.parent_id)
        if parent is None:
            problems.append(f"node {n.id} is an orphan")
        elif n.depth != parent.depth + 1:
            problems.append(f"node {n.id} depth {n.depth} under parent depth {parent.depth}")
    expanded = [ev["parent_id"] for ev in result.events]
    if len(expanded) != len(set(expanded)):
        problems.append("a node was expanded twice")
    return problems


def beta_paths(result: RunResult) -> list[list[float]]:
    """The beta used at each expansion along every root-to-leaf path."""
    beta_at = {ev["parent_id"]: ev["beta_used"] for ev in result.events if ev["beta_used"] is not None}
    parent_of = {n.id: n.parent_id for n in result.nodes}
    children = {n.parent_id for n in result.nodes if n.parent_id is not None}
    paths = []
    for n in result.nodes:
        if n.id in children:
            continue
        chain, cur = [], n.id
        while cur is not None:
            if cur in beta_at:
                chain.append(beta_at[cur])
            cur = parent_of[cur]
        paths.append(chain[::-1])
    return paths
