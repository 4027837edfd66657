"""JSONL trace serialization and budget-truncated replay."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .search import pick_answer


def dumps(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def dumps_trace(records: Iterable[dict]) -> str:
    return "".join(dumps(r) + "\n" for r in records)


def write_trace(path: str | Path, records: Iterable[dict]) -> None:
    Path(path).write_text(dumps_trace(records), encoding="utf-8")


def read_trace(path: str | Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


@dataclass(frozen=True)
class InstanceOutcome:
    instance: int
    seed: int
    solved: bool
    tokens_used: int
    expansions: int
    generated: int
    verify_accepts: int
    verify_rejects: int
    reason: str

    def to_dict(self) -> dict:
        return asdict(self)


def outcome_of(records: Sequence[dict]) -> InstanceOutcome:
    """The outcome a trace recorded for itself."""
    header, end = records[0], records[-1]
    return InstanceOutcome(
        header["instance"],
        header["seed"],
        bool(end["solved"]),
        int(end["tokens_used"]),
        int(end["expansions"]),
        int(end["generated"]),
        int(end["verify_accepts"]),
        int(end["verify_rejects"]),
        end["reason"],
    )


def replay(records: Sequence[dict], token_limit: int) -> InstanceOutcome:
    """Outcome the same run would have had under a smaller (or equal) token limit.

    Decisions never read the limit itself, so a run under limit ``B`` is the
    recorded run cut at the first expansion that starts with ``B`` or more
    tokens already spent.
    """
    header, end = records[0], records[-1]
    if header.get("type") != "header" or end.get("type") != "end":
        raise ValueError("trace must start with a header and finish with an end record")
    recorded_limit = header["budget"]["token_limit"]
    if token_limit > recorded_limit and end["reason"] == "token-budget":
        raise ValueError(f"cannot replay at {token_limit} tokens; the run stopped at its own limit {recorded_limit}")
    tokens = expansions = generated = accepts = rejects = 0
    finals: list[dict] = []
    others: list[dict] = []
    reason = end["reason"]
    for ev in records[1:-1]:
        if ev["type"] == "stop" or ev["tokens_before"] >= token_limit:
            reason = "token-budget"
            break
        tokens += ev["tokens"]
        expansions += 1
        generated += len(ev["candidates"])
        accepts += sum(c["verified"] for c in ev["candidates"])
        rejects += sum(not c["verified"] for c in ev["candidates"])
        by_id = {c["id"]: c for c in ev["candidates"]}
        for cid in ev["survivors"]:
            c = by_id[cid]
            (finals if c["final"] else others).append(c)
    answer = pick_answer(finals, others)
    solved = bool(answer and answer["final"] and answer["correct"])
    return InstanceOutcome(header["instance"], header["seed"], solved, tokens, expansions, generated, accepts, rejects, reason)
