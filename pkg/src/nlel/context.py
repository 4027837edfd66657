"""Compact, measurable search context handed to the labeller and tuner."""

from __future__ import annotations

import statistics
from dataclasses import asdict, dataclass
from typing import Callable, Iterable, Protocol, Sequence

DEFAULT_LABEL_WINDOW = 8

TextDistance = Callable[[str, str], float]


class Scored(Protocol):
    text: str
    mu: float
    sigma: float


def trigrams(text: str) -> frozenset[str]:
    """Character 3-grams; strings shorter than three characters are one gram."""
    if len(text) < 3:
        return frozenset([text]) if text else frozenset()
    return frozenset(text[i : i + 3] for i in range(len(text) - 2))


def jaccard_distance(a: str, b: str) -> float:
    ga, gb = trigrams(a), trigrams(b)
    union = ga | gb
    if not union:
        return 0.0
    return 1.0 - len(ga & gb) / len(union)


def novelty(texts: Sequence[str], distance: TextDistance = jaccard_distance) -> float:
    """Median nearest-neighbour distance among ``texts``.

    Fewer than two texts are maximally novel (1.0) by convention.
    """
    if len(texts) < 2:
        return 1.0
    grams = [trigrams(t) for t in texts] if distance is jaccard_distance else None
    nearest = []
    for i, a in enumerate(texts):
        best = 1.0
        for j, b in enumerate(texts):
            if i == j:
                continue
            if grams is not None:
                union = grams[i] | grams[j]
                d = 0.0 if not union else 1.0 - len(grams[i] & grams[j]) / len(union)
            else:
                d = distance(a, b)
            if d < best:
                best = d
                if best == 0.0:
                    break
        nearest.append(best)
    return float(statistics.median(nearest))


@dataclass(frozen=True)
class BudgetCounters:
    tokens_used: int = 0
    token_budget: int = 1
    retrieval_calls: int = 0
    verify_accepts: int = 0
    verify_rejects: int = 0

    def __post_init__(self) -> None:
        if self.token_budget <= 0:
            raise ValueError("token_budget must be positive")
        if min(self.tokens_used, self.retrieval_calls, self.verify_accepts, self.verify_rejects) < 0:
            raise ValueError("budget counters must be non-negative")

    @property
    def exhausted(self) -> bool:
        return self.tokens_used >= self.token_budget


@dataclass(frozen=True)
class ContextSnapshot:
    frontier_sigma_median: float
    novelty_median: float
    depth: int
    sibling_best_mu: float
    sibling_best_sigma: float
    recent_labels: tuple[str, ...]
    tokens_used: int
    token_budget: int
    retrieval_calls: int
    verify_accepts: int
    verify_rejects: int
    budget_exhausted: bool

    def to_dict(self) -> dict:
        d = asdict(self)
        d["recent_labels"] = list(self.recent_labels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ContextSnapshot:
        return cls(**{**d, "recent_labels": tuple(d["recent_labels"])})

    def render(self) -> str:
        """Prompt rendering. Budget appears only as usage and the exhausted bit,
        so decisions made before exhaustion do not depend on the cap."""
        labels = "; ".join(self.recent_labels) if self.recent_labels else "(none)"
        return (
            f"depth={self.depth} frontier_sigma_median={self.frontier_sigma_median:.4f} "
            f"novelty={self.novelty_median:.4f} sibling_best=(mu={self.sibling_best_mu:.4f}, "
            f"sigma={self.sibling_best_sigma:.4f}) tokens_used={self.tokens_used} "
            f"retrieval_calls={self.retrieval_calls} verify={self.verify_accepts}/"
            f"{self.verify_accepts + self.verify_rejects} budget_exhausted={str(self.budget_exhausted).lower()}\n"
            f"recent_labels: {labels}"
        )


def summarize(
    frontier: Iterable[Scored],
    siblings: Iterable[Scored],
    history: Sequence[str],
    budgets: BudgetCounters,
    depth: int = 0,
    window: int = DEFAULT_LABEL_WINDOW,
    novelty_window: int | None = None,
    distance: TextDistance = jaccard_distance,
) -> ContextSnapshot:
    """Aggregate the live search state into a :class:`ContextSnapshot`.

    ``novelty_window`` limits the novelty median to the last N frontier
    entries; ``None`` uses the whole frontier.
    """
    frontier = list(frontier)
    siblings = list(siblings)
    sigma_median = float(statistics.median(c.sigma for c in frontier)) if frontier else 0.0
    texts = [c.text for c in frontier]
    if novelty_window is not None:
        texts = texts[-novelty_window:]
    best_mu, best_sigma = 0.0, 0.0
    if siblings:
        best = max(siblings, key=lambda c: c.mu)
        best_mu, best_sigma = float(best.mu), float(best.sigma)
    return ContextSnapshot(
        frontier_sigma_median=sigma_median,
        novelty_median=novelty(texts, distance),
        depth=depth,
        sibling_best_mu=best_mu,
        sibling_best_sigma=best_sigma,
        recent_labels=tuple(history[-window:]) if window > 0 else (),
        tokens_used=budgets.tokens_used,
        token_budget=budgets.token_budget,
        retrieval_calls=budgets.retrieval_calls,
        verify_accepts=budgets.verify_accepts,
        verify_rejects=budgets.verify_rejects,
        budget_exhausted=budgets.exhausted,
    )
