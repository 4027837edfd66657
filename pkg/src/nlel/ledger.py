"""Historical (parent, label, context) -> control rows, the ledger objective,
Pareto tagging and the carve-out deployment test."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

from .context import ContextSnapshot, jaccard_distance
from .schema import ControlVector

TAGS = ("pareto", "dominated", "untagged")


def parent_digest(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class LedgerRow:
    parent_digest: str
    label_text: str
    context: ContextSnapshot
    pi_applied: ControlVector
    outcome_S: float
    success: bool
    cost_tokens: int
    verify_record: tuple[int, int] = (0, 0)
    tag: str = "untagged"

    def __post_init__(self) -> None:
        if self.cost_tokens < 0:
            raise ValueError("cost_tokens must be non-negative")
        if self.tag not in TAGS:
            raise ValueError(f"unknown tag {self.tag!r}")

    def to_dict(self) -> dict:
        return {
            "parent_digest": self.parent_digest,
            "label_text": self.label_text,
            "context": self.context.to_dict(),
            "pi_applied": self.pi_applied.to_dict(),
            "pi_provenance": self.pi_applied.provenance,
            "schema_version": self.pi_applied.schema_version,
            "outcome_S": self.outcome_S,
            "success": self.success,
            "cost_tokens": self.cost_tokens,
            "verify_record": list(self.verify_record),
            "tag": self.tag,
        }

    @classmethod
    def from_dict(cls, d: dict) -> LedgerRow:
        pi = ControlVector(d["pi_applied"], d.get("pi_provenance", "emitted"), d.get("schema_version", "v1"))
        return cls(
            parent_digest=d["parent_digest"],
            label_text=d["label_text"],
            context=ContextSnapshot.from_dict(d["context"]),
            pi_applied=pi,
            outcome_S=float(d["outcome_S"]),
            success=bool(d["success"]),
            cost_tokens=int(d["cost_tokens"]),
            verify_record=tuple(d.get("verify_record", (0, 0))),
            tag=d.get("tag", "untagged"),
        )


def load_ledger(path: str | Path) -> list[LedgerRow]:
    path = Path(path)
    if not path.exists():
        return []
    return [LedgerRow.from_dict(json.loads(line)) for line in path.read_text().splitlines() if line.strip()]


def save_ledger(path: str | Path, rows: Iterable[LedgerRow]) -> None:
    lines = [json.dumps(r.to_dict(), sort_keys=True, separators=(",", ":")) for r in rows]
    Path(path).write_text("".join(line + "\n" for line in lines))


def objective_J(rows: Sequence[LedgerRow], lam: float, cost_scale: float = 1.0) -> float:
    """Mean outcome score minus ``lam`` times mean cost in units of ``cost_scale`` tokens.

    Runs pass their token limit as ``cost_scale`` so ``lam`` is budget-relative.
    """
    if not rows:
        raise ValueError("objective over an empty row set")
    if lam < 0 or cost_scale <= 0:
        raise ValueError("lam must be >= 0 and cost_scale > 0")
    mean_s = sum(r.outcome_S for r in rows) / len(rows)
    mean_cost = sum(r.cost_tokens / cost_scale for r in rows) / len(rows)
    return mean_s - lam * mean_cost


def pareto_tag(rows: Sequence[LedgerRow]) -> list[LedgerRow]:
    """Tag each row pareto unless another row is at least as good on score and
    cost and strictly better on one of them. Input order is preserved."""
    order = sorted(range(len(rows)), key=lambda i: (rows[i].cost_tokens, -rows[i].outcome_S))
    tags = ["pareto"] * len(rows)
    best_cheaper = float("-inf")  # best score among strictly cheaper rows
    i = 0
    while i < len(order):
        j = i
        cost = rows[order[i]].cost_tokens
        while j < len(order) and rows[order[j]].cost_tokens == cost:
            j += 1
        group = order[i:j]
        top = rows[group[0]].outcome_S
        for idx in group:
            s = rows[idx].outcome_S
            if best_cheaper >= s or top > s:
                tags[idx] = "dominated"
        best_cheaper = max(best_cheaper, top)
        i = j
    return [replace(row, tag=tag) for row, tag in zip(rows, tags)]


def render_row(row: LedgerRow) -> str:
    ctx = row.context
    budget_pct = 100.0 * ctx.tokens_used / ctx.token_budget
    controls = json.dumps(row.pi_applied.to_dict(), separators=(",", ":"))
    tag = row.tag.upper()
    return (
        f"[{tag}] label={row.label_text} ctx={{depth={ctx.depth},sigma={ctx.frontier_sigma_median:.3f},"
        f"novelty={ctx.novelty_median:.3f},budget={budget_pct:.0f}%}} Π={controls} "
        f"→ S={row.outcome_S:.3f}, cost={row.cost_tokens}"
    )


def depth_bucket(depth: int) -> int:
    return depth // 2


def select_rows(
    rows: Sequence[LedgerRow], depth: int, label_text: str, max_rows: int = 8
) -> list[LedgerRow]:
    """Pick prompt rows: same depth bucket, most label-similar first, then most
    recent; returned in chronological order."""
    if max_rows <= 0:
        return []
    bucket = depth_bucket(depth)
    pool = [(i, r) for i, r in enumerate(rows) if depth_bucket(r.context.depth) == bucket]
    ranked = sorted(pool, key=lambda ir: (jaccard_distance(ir[1].label_text, label_text), -ir[0]))
    chosen = sorted(ranked[:max_rows], key=lambda ir: ir[0])
    return [r for _, r in chosen]


@dataclass(frozen=True)
class CarveoutEstimate:
    alpha: float
    eta: float
    rho: float
    gamma: float
    M: float
    c_call_mean: float
    c_fixed: float

    def __post_init__(self) -> None:
        for name in ("alpha", "eta", "rho"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("gamma", "M", "c_call_mean", "c_fixed"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


def carveout_advantage(est: CarveoutEstimate) -> tuple[float, bool]:
    """Lower bound on the objective gain from gating in one extra label, and
    whether it clears zero."""
    fire_rate = est.alpha * est.rho + est.eta * (1.0 - est.rho)
    bound = (
        est.alpha * est.rho * est.gamma
        - est.eta * (1.0 - est.rho) * est.M
        - fire_rate * est.c_call_mean
        - est.c_fixed
    )
    return bound, bound > 0


def estimate_harm_bound(L_lip: float, r: float, lam: float, delta_cost_max: float) -> float:
    """Worst-case loss of a false-positive deviation inside the trust region."""
    if min(L_lip, r, lam, delta_cost_max) < 0:
        raise ValueError("inputs must be non-negative")
    return L_lip * r + lam * delta_cost_max
