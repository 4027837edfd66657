"""Compute-aware metrics with seeded bootstrap intervals."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .trace import InstanceOutcome, replay

BUDGET_MULTIPLIERS = (0.5, 1.0, 2.0)


def _ratio(num: float, den: float) -> float | None:
    return num / den if den else None


def summarize_outcomes(outcomes: Sequence[InstanceOutcome]) -> dict:
    solved = sum(o.solved for o in outcomes)
    tokens = sum(o.tokens_used for o in outcomes)
    checked = sum(o.verify_accepts + o.verify_rejects for o in outcomes)
    return {
        "instances": len(outcomes),
        "solved": solved,
        "accuracy": _ratio(solved, len(outcomes)),
        "tokens_total": tokens,
        "tokens_per_success": _ratio(tokens, solved),
        "verify_accept_rate": _ratio(sum(o.verify_accepts for o in outcomes), checked),
        "expansions_per_success": _ratio(sum(o.expansions for o in outcomes), solved),
    }


def bootstrap_ci(
    values: Sequence[float],
    statistic: Callable[[np.ndarray], float] = np.mean,
    n_resamples: int = 1000,
    seed: int = 0,
    level: float = 0.95,
) -> tuple[float, float]:
    """Percentile bootstrap interval; identical for identical ``seed``."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ValueError("bootstrap over an empty sample")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, arr.size, size=(n_resamples, arr.size))
    stats = np.array([statistic(arr[row]) for row in idx])
    tail = (1.0 - level) / 2.0
    return float(np.quantile(stats, tail)), float(np.quantile(stats, 1.0 - tail))


def _tokens_per_success(sample: np.ndarray) -> float:
    # rows are (tokens, solved); nan when nothing in the resample was solved
    solved = sample[:, 1].sum()
    return float(sample[:, 0].sum() / solved) if solved else float("nan")


def bootstrap_pairs(
    pairs: np.ndarray,
    statistic: Callable[[np.ndarray], float],
    n_resamples: int = 1000,
    seed: int = 0,
    level: float = 0.95,
) -> tuple[float | None, float | None]:
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(pairs), size=(n_resamples, len(pairs)))
    stats = np.array([statistic(pairs[row]) for row in idx])
    stats = stats[~np.isnan(stats)]
    if stats.size == 0:
        return None, None
    tail = (1.0 - level) / 2.0
    return float(np.quantile(stats, tail)), float(np.quantile(stats, 1.0 - tail))


@dataclass
class MetricsReport:
    reference_token_limit: int
    per_budget: dict[str, dict] = field(default_factory=dict)

    @property
    def success_at_compute(self) -> dict[str, float | None]:
        return {k: v["accuracy"] for k, v in self.per_budget.items()}

    def to_dict(self) -> dict:
        ref = self.per_budget.get("1.0x", {})
        return {
            "reference_token_limit": self.reference_token_limit,
            "success_at_compute": self.success_at_compute,
            "tokens_per_success": ref.get("tokens_per_success"),
            "verify_accept_rate": ref.get("verify_accept_rate"),
            "expansions_per_success": ref.get("expansions_per_success"),
            "per_budget": self.per_budget,
        }


def budget_key(multiplier: float) -> str:
    return f"{multiplier:.1f}x"


def metrics_for(outcomes: Sequence[InstanceOutcome], resample_seed: int = 0, n_resamples: int = 1000) -> dict:
    out = summarize_outcomes(outcomes)
    if outcomes:
        solved = np.array([float(o.solved) for o in outcomes])
        lo, hi = bootstrap_ci(solved, seed=resample_seed, n_resamples=n_resamples)
        out["accuracy_ci"] = [lo, hi]
        pairs = np.array([[o.tokens_used, float(o.solved)] for o in outcomes])
        lo2, hi2 = bootstrap_pairs(pairs, _tokens_per_success, n_resamples, resample_seed)
        out["tokens_per_success_ci"] = [lo2, hi2]
    return out


def report_from_traces(
    traces: Sequence[Sequence[dict]],
    reference_limit: int,
    multipliers: Sequence[float] = BUDGET_MULTIPLIERS,
    resample_seed: int = 0,
    n_resamples: int = 1000,
) -> MetricsReport:
    """success@compute and friends at each budget multiplier, by replaying traces."""
    report = MetricsReport(reference_limit)
    for mult in multipliers:
        limit = max(1, int(round(reference_limit * mult)))
        outcomes = [replay(t, limit) for t in traces]
        report.per_budget[budget_key(mult)] = {"token_limit": limit, **metrics_for(outcomes, resample_seed, n_resamples)}
    return report
