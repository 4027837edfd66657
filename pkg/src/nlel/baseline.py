"""Directly configured chain-of-thought and tree-of-thoughts baselines.

These loops take fixed controls and draw candidates from the same generator
as the labelled engine, but involve no labeller, tuner or projection. Their
traces use the engine's record layout so the two can be compared byte for byte.
"""

from __future__ import annotations

from .context import BudgetCounters, summarize
from .policies import DEFAULT_LABEL, STOP_LABEL
from .rng import derive_seed
from .schema import ControlSchema, ControlVector
from .search import (
    EngineConfig,
    Generator,
    Node,
    RunBudget,
    RunResult,
    anneal_beta,
    pick_answer,
    score,
    select_topk,
)
from .verification import VerifierBackend, VerifierConfig, run_passes


def cot_controls(schema: ControlSchema) -> ControlVector:
    """The defaults with one branch and one candidate per step."""
    return schema.defaults().replace(branch_quota=1, gen_count=1)


def tot_controls(schema: ControlSchema) -> ControlVector:
    return schema.defaults()


class BaselineSearch:
    """Fixed-control breadth-first search; ``controls`` sets quota, bundle size and beta."""

    def __init__(
        self,
        schema: ControlSchema,
        generator: Generator,
        controls: ControlVector,
        verifier: VerifierBackend,
        budget: RunBudget,
        config: EngineConfig = EngineConfig(),
    ):
        self.schema = schema
        self.generator = generator
        self.controls = controls
        self.verifier = verifier
        self.budget = budget
        self.config = config
        self.pi0 = schema.defaults()

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
            "pi0": self.pi0.to_dict(),
            "budget": self.budget.to_dict(),
        }

    def run(self, instance: int, seed: int) -> RunResult:
        pi = self.controls
        budget = self.budget
        b, g, beta0 = int(pi["branch_quota"]), int(pi["gen_count"]), float(pi["beta"])
        vconfig = VerifierConfig.from_control(pi, self.config.verify_mode)
        unit_cost = min(max(self.generator.candidate_cost(pi), budget.c_min), budget.c_max)
        label = DEFAULT_LABEL

        nodes = {0: Node(0, self.generator.root(instance), 0, 0.0, 0.0)}
        frontier = [0]
        history: list[str] = []
        events: list[dict] = []
        tokens = accepts = rejects = generated = 0
        cost_total = 0.0
        next_id = 1
        reason = "frontier-empty"
        while frontier:
            if len(events) >= budget.expansion_cap:
                reason = "expansion-cap"
                break
            frontier.sort(key=lambda i: (nodes[i].depth, -nodes[i].S, i))
            parent = nodes[frontier[0]]
            siblings = [n for n in nodes.values() if n.parent_id == parent.parent_id and n.id not in (0, parent.id)]
            counters = BudgetCounters(tokens, budget.token_limit, 0, accepts, rejects)
            ctx = summarize([nodes[i] for i in frontier], siblings, history, counters, depth=parent.depth)
            frontier.pop(0)
            context = ctx.to_dict()
            del context["token_budget"]
            event = {"seq": len(events), "parent_id": parent.id, "depth": parent.depth, "tokens_before": tokens, "context": context}
            if ctx.budget_exhausted:
                clamped = self.pi0.replace(provenance="clamped_budget").to_dict()
                event.update(
                    type="stop", labels=[STOP_LABEL.text], stop=[True], pi_emitted=[None], pi_applied=[clamped],
                    provenance=["clamped_budget"], projected=[[]], label_tokens=[0], candidates=[], survivors=[],
                    beta_used=None, k=0, tokens=0, usage=[], failures=[], retrieval_calls=0,
                )
                events.append(event)
                reason = "token-budget"
                break

            bundle = self.generator.gen_bundle(parent.text, parent.depth, label, pi, g, derive_seed(seed, instance, parent.id, 0))
            usage = [u.to_dict() for u in bundle.usage]
            beta = anneal_beta(beta0, parent.depth + 1, self.config.gamma_a)
            final = parent.depth + 1 >= budget.depth_cap
            pool = []
            for draft in bundle.drafts:
                verdict = run_passes(draft, vconfig, self.verifier)
                usage.append({"role": "verifier", "prompt_tokens": 0,
                              "completion_tokens": self.config.verify_tokens_per_pass * len(verdict.per_pass),
                              "backend_id": "verifier"})
                accepts += verdict.accepted
                rejects += not verdict.accepted
                pool.append({
                    "id": next_id, "label_index": 0, "text": draft.text, "mu": draft.mu, "sigma": draft.sigma,
                    "verified": verdict.accepted, "passes": [p.accepted for p in verdict.per_pass],
                    "verify_errors": sum(p.error for p in verdict.per_pass), "correct": draft.correct,
                    "final": final, "cost": unit_cost, "S": score(draft.mu, draft.sigma, beta),
                })
                next_id += 1
                generated += 1
                cost_total += unit_cost
            kept = [c[0] for c in select_topk([(c["id"], c["mu"], c["sigma"]) for c in pool if c["verified"]], b, beta)]
            by_id = {c["id"]: c for c in pool}
            for cid in kept:
                c = by_id[cid]
                nodes[cid] = Node(cid, c["text"], parent.depth + 1, c["mu"], c["sigma"],
                                  status="terminal" if final else "frontier", parent_id=parent.id,
                                  label=label.text, correct=c["correct"], final=final, S=c["S"], pi_in=pi)
                if not final:
                    frontier.append(cid)
            parent.status = "expanded" if kept else "terminal"
            spent = sum(u["prompt_tokens"] + u["completion_tokens"] for u in usage)
            tokens += spent
            history.append(label.text)
            event.update(
                type="expand", labels=[label.text], stop=[False], pi_emitted=[pi.to_dict()], pi_applied=[pi.to_dict()],
                provenance=[pi.provenance], projected=[[]], label_tokens=[spent], candidates=pool, survivors=kept,
                beta_used=beta, k=b, tokens=spent, usage=usage, failures=[], retrieval_calls=0,
            )
            events.append(event)
            if final and kept:
                reason = "final-answer"
                break

        made = [n for n in nodes.values() if n.id != 0]
        answer = pick_answer([{"id": n.id, "mu": n.mu} for n in made if n.final], [{"id": n.id, "mu": n.mu} for n in made])
        node = nodes[answer["id"]] if answer else None
        end = {
            "type": "end", "reason": reason, "answer_id": node.id if node else None,
            "solved": bool(node and node.final and node.correct), "tokens_used": tokens, "expansions": len(events) - (reason == "token-budget"),
            "generated": generated, "cost_total": cost_total, "verify_accepts": accepts, "verify_rejects": rejects,
        }
        return RunResult(self.header(instance, seed), events, end, list(nodes.values()), [])
