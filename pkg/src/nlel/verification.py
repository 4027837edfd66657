"""Conjunctive verification passes and a synthetic verifier with a known error model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, NamedTuple

from .rng import unit_float

MODES = ("independent", "union_bound")


@dataclass(frozen=True)
class VerifierConfig:
    passes: int
    strictness: float = 0.5
    independence_mode: str = "independent"

    def __post_init__(self) -> None:
        if not isinstance(self.passes, int) or self.passes < 0:
            raise ValueError("passes must be a non-negative integer")
        if not 0.0 <= self.strictness <= 1.0:
            raise ValueError("strictness must lie in [0, 1]")
        if self.independence_mode not in MODES:
            raise ValueError(f"independence_mode must be one of {MODES}")

    @classmethod
    def from_control(cls, pi: Any, mode: str = "independent") -> VerifierConfig:
        return cls(int(pi["verify_passes"]), float(pi["verify_strictness"]), mode)


@dataclass(frozen=True)
class PassRecord:
    index: int
    accepted: bool
    rationale: str
    error: bool = False


class VerificationResult(NamedTuple):
    accepted: bool
    per_pass: tuple[PassRecord, ...]


# backend(candidate, pass_index, config) -> (accepted, rationale)
VerifierBackend = Callable[[Any, int, VerifierConfig], "tuple[bool, str]"]


def run_passes(candidate: Any, config: VerifierConfig, backend: VerifierBackend) -> VerificationResult:
    """Accept iff every one of ``config.passes`` passes accepts.

    Passes run in order and stop at the first rejection. A backend exception
    counts as a rejection and is flagged on the pass record.
    """
    records: list[PassRecord] = []
    for i in range(config.passes):
        try:
            ok, why = backend(candidate, i, config)
        except Exception as exc:  # conservative: a failed check is a reject
            records.append(PassRecord(i, False, f"verifier error: {exc}", error=True))
            break
        records.append(PassRecord(i, bool(ok), str(why)))
        if not ok:
            break
    accepted = len(records) == config.passes and all(r.accepted for r in records)
    return VerificationResult(accepted, tuple(records))


def false_accept_rate(eps0: float, strictness: float) -> float:
    """Per-pass false-accept probability of the synthetic verifier."""
    return eps0 * (1.0 - strictness)


class SyntheticVerifier:
    """Seeded verifier over candidates that expose ``correct`` and ``key``.

    An incorrect candidate passes one check with probability
    ``eps0 * (1 - strictness)``; a correct one fails with ``false_reject``.
    In ``union_bound`` mode all passes on a candidate share a single coin,
    the fully correlated worst case.
    """

    def __init__(self, eps0: float = 0.1, false_reject: float = 0.0, seed: int = 0):
        if not (0.0 <= eps0 <= 1.0 and 0.0 <= false_reject <= 1.0):
            raise ValueError("rates must lie in [0, 1]")
        self.eps0 = eps0
        self.false_reject = false_reject
        self.seed = seed

    def __call__(self, candidate: Any, pass_index: int, config: VerifierConfig) -> tuple[bool, str]:
        key = getattr(candidate, "key", None) or candidate.text
        coin = "shared" if config.independence_mode == "union_bound" else pass_index
        u = unit_float("verify", self.seed, key, coin)
        if getattr(candidate, "correct", None):
            ok = u >= self.false_reject
            return ok, "consistent" if ok else "false reject"
        ok = u < false_accept_rate(self.eps0, config.strictness)
        return ok, "false accept" if ok else "error detected"
