"""Labeller and tuner policies, including the prompt-only JSON Parameter Emitter."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Mapping, Protocol, Sequence

from .adapter import AdapterError, Backend, GenerationRequest, Usage
from .context import ContextSnapshot
from .ledger import LedgerRow, pareto_tag, render_row, select_rows
from .rng import derive_seed
from .schema import (
    ControlSchema,
    ControlVector,
    ValidationError,
    _no_duplicates,
    _parse_constant,
    project_trust_region_report,
    render_schema_doc,
    validate,
)


@dataclass(frozen=True)
class Label:
    text: str
    is_default: bool = False
    is_stop: bool = False

    def __post_init__(self) -> None:
        if not self.text or not self.text.strip():
            raise ValueError("label text must be non-empty")


DEFAULT_LABEL = Label("continue", is_default=True)
STOP_LABEL = Label("stop", is_default=True, is_stop=True)


def load_template(name: str) -> str:
    return resources.files("nlel").joinpath(f"templates/{name}.txt").read_text()


_PLACEHOLDER = re.compile(r"\{(\w+)\}")


def render_template(template: str, **values: str) -> str:
    """Fill ``{name}`` placeholders in one pass; substituted text is never re-scanned."""
    return _PLACEHOLDER.sub(lambda m: values.get(m.group(1), m.group(0)), template)


# -- labellers --------------------------------------------------------------


@dataclass
class LabelResult:
    labels: list[Label]
    usage: list[Usage] = field(default_factory=list)
    failure: str | None = None


class Labeller(Protocol):
    def propose(self, parent_text: str, context: ContextSnapshot, m: int) -> tuple[list[Label], list[Usage]]: ...


class ConstantLabeller:
    """Always the same single label; with a constant tuner this recovers a fixed controller."""

    def __init__(self, label: Label = DEFAULT_LABEL):
        self.label = label

    def propose(self, parent_text: str, context: ContextSnapshot, m: int) -> tuple[list[Label], list[Usage]]:
        return [self.label], []


class BackendLabeller:
    """Asks a text backend for one directive per line."""

    _BULLET = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s*")

    def __init__(
        self,
        backend: Backend,
        template: str | None = None,
        decoding: Mapping[str, Any] | None = None,
    ):
        self.backend = backend
        self.template = template or load_template("labeller_v1")
        self.decoding = dict(decoding or {})

    def propose(self, parent_text: str, context: ContextSnapshot, m: int) -> tuple[list[Label], list[Usage]]:
        prompt = render_template(self.template, m=str(m), parent=parent_text, context=context.render())
        resp = self.backend.complete(GenerationRequest(prompt, self.decoding, n=1))
        labels = []
        for line in resp.texts[0].splitlines():
            text = self._BULLET.sub("", line).strip()
            if text:
                labels.append(Label(text))
        return labels, [resp.usage("labeller")]


class RandomLabeller:
    """Random nonsense label strings (ablation control)."""

    _ALPHABET = "abcdefghijklmnopqrstuvwxyz"

    def __init__(self, seed: int = 0, words: int = 3):
        self.seed = seed
        self.words = words

    def propose(self, parent_text: str, context: ContextSnapshot, m: int) -> tuple[list[Label], list[Usage]]:
        import random

        rng = random.Random(derive_seed("random-labels", self.seed, parent_text, context.depth))
        labels = []
        for _ in range(m):
            words = ["".join(rng.choices(self._ALPHABET, k=rng.randint(3, 7))) for _ in range(self.words)]
            labels.append(Label(" ".join(words)))
        return labels, []


def emit_labels(labeller: Labeller, parent_text: str, context: ContextSnapshot, m: int) -> LabelResult:
    """Between 1 and ``m`` de-duplicated labels for a parent.

    With the budget exhausted the labeller is not consulted and a single
    default/stop label is returned. Backend failures and empty proposals
    degrade to the default label.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if context.budget_exhausted:
        return LabelResult([STOP_LABEL])
    try:
        proposed, usage = labeller.propose(parent_text, context, m)
    except AdapterError as exc:
        return LabelResult([DEFAULT_LABEL], [], f"labeller backend failure: {exc}")
    seen: set[str] = set()
    labels: list[Label] = []
    for label in proposed:
        key = label.text.strip()
        if key in seen:
            continue
        seen.add(key)
        labels.append(label)
    if not labels:
        return LabelResult([DEFAULT_LABEL], usage, "labeller returned no labels")
    return LabelResult(labels[:m], usage)


# -- tuners -----------------------------------------------------------------


@dataclass
class TunerResult:
    pi: ControlVector
    audit: dict | None = None
    usage: list[Usage] = field(default_factory=list)


class Tuner(Protocol):
    def propose(self, parent_text: str, label: Label, context: ContextSnapshot) -> TunerResult: ...


class ConstantTuner:
    def __init__(self, pi_fixed: ControlVector):
        self.pi_fixed = pi_fixed

    def propose(self, parent_text: str, label: Label, context: ContextSnapshot) -> TunerResult:
        return TunerResult(self.pi_fixed)


def constant_tuner(pi_fixed: ControlVector, schema: ControlSchema | None = None) -> ConstantTuner:
    """A tuner that ignores its inputs; ``pi_fixed`` is re-validated when a schema is given."""
    if schema is not None:
        pi_fixed = validate(schema, pi_fixed.to_dict(), pi_fixed.provenance)
    return ConstantTuner(pi_fixed)


class ExtractionError(ValueError):
    pass


_DECODER = json.JSONDecoder(parse_constant=_parse_constant, object_pairs_hook=_no_duplicates)


def extract_json_object(text: str, max_chars: int = 16_384) -> dict:
    """The single top-level JSON object embedded in ``text``.

    Prose around the object is ignored; zero objects or more than one raise
    :class:`ExtractionError`, as do NaN/Infinity and duplicate keys.
    """
    if not isinstance(text, str):
        raise ExtractionError("response is not text")
    if len(text) > max_chars:
        raise ExtractionError(f"response longer than {max_chars} characters")
    try:
        whole = _DECODER.decode(text)
    except (ValueError, RecursionError):
        pass
    else:
        if not isinstance(whole, dict):
            raise ExtractionError(f"response is a JSON {type(whole).__name__}, not an object")
        return whole
    found: dict | None = None
    pos = 0
    while (start := text.find("{", pos)) >= 0:
        try:
            obj, end = _DECODER.raw_decode(text, start)
        except (ValueError, RecursionError):
            pos = start + 1
            continue
        if found is not None:
            raise ExtractionError("response contains more than one JSON object")
        found, pos = obj, end
    if found is None:
        raise ExtractionError("no JSON object in response")
    return found


@dataclass(frozen=True)
class JPEConfig:
    schema_doc: str
    fallback: ControlVector
    max_ledger_rows: int = 8
    retry_limit: int = 1
    template: str = ""
    max_response_chars: int = 16_384

    def __post_init__(self) -> None:
        if self.max_ledger_rows < 0 or self.retry_limit < 0:
            raise ValueError("max_ledger_rows and retry_limit must be non-negative")

    @classmethod
    def for_schema(cls, schema: ControlSchema, **kwargs: Any) -> JPEConfig:
        return cls(render_schema_doc(schema), kwargs.pop("fallback", schema.defaults()), **kwargs)


RETRY_NOTE = "\n\nYour previous reply was rejected ({reason}). Reply with exactly one JSON object that validates."


def render_jpe_prompt(
    config: JPEConfig, rows: Sequence[LedgerRow], parent_text: str, label: Label, context: ContextSnapshot
) -> str:
    ledger = "\n".join(render_row(r) for r in rows) if rows else "(empty)"
    return render_template(
        config.template or load_template("jpe_v1"),
        schema=config.schema_doc,
        ledger=ledger,
        parent=parent_text,
        label=label.text,
        context=context.render(),
    )


class JPETuner:
    """Prompt-only tuner: renders schema, a Pareto-tagged ledger slice and the
    current case, then parses and strictly validates one JSON object.

    Malformed output is retried ``retry_limit`` times and then replaced by the
    fallback (safe default) vector; this never raises for bad model output.
    """

    def __init__(
        self,
        schema: ControlSchema,
        backend: Backend,
        config: JPEConfig | None = None,
        ledger_rows: Sequence[LedgerRow] = (),
        decoding: Mapping[str, Any] | None = None,
    ):
        self.schema = schema
        self.backend = backend
        self.config = config or JPEConfig.for_schema(schema)
        validate(schema, self.config.fallback.to_dict())
        self.fallback = self.config.fallback.replace(provenance="default")
        self.ledger_rows = tuple(pareto_tag(ledger_rows)) if ledger_rows else ()
        self.decoding = dict(decoding or {})

    def prompt_for(self, parent_text: str, label: Label, context: ContextSnapshot) -> str:
        rows = select_rows(self.ledger_rows, context.depth, label.text, self.config.max_ledger_rows)
        return render_jpe_prompt(self.config, rows, parent_text, label, context)

    def propose(self, parent_text: str, label: Label, context: ContextSnapshot) -> TunerResult:
        if label.is_stop:
            raise ValueError("stop labels are not tuned")
        prompt = self.prompt_for(parent_text, label, context)
        audit: dict[str, Any] = {
            "prompt": prompt,
            "attempts": [],
            "raw_text": None,
            "parse_ok": False,
            "validation_errors": [],
            "transport_error": False,
            "fallback": False,
        }
        usage: list[Usage] = []
        reason = ""
        for attempt in range(self.config.retry_limit + 1):
            text = prompt if attempt == 0 else prompt + RETRY_NOTE.format(reason=reason)
            record: dict[str, Any] = {"raw_text": None, "parse_ok": False, "validation_errors": [], "error": None}
            audit["attempts"].append(record)
            try:
                resp = self.backend.complete(GenerationRequest(text, self.decoding, n=1))
            except AdapterError as exc:
                record["error"] = f"{type(exc).__name__}: {exc}"
                audit["transport_error"] = True
                reason = "transport failure"
                continue
            usage.append(resp.usage("tuner"))
            raw = resp.texts[0] if resp.texts else ""
            record["raw_text"] = audit["raw_text"] = raw
            try:
                obj = extract_json_object(raw, self.config.max_response_chars)
            except ExtractionError as exc:
                record["error"] = str(exc)
                audit["parse_ok"] = False
                reason = str(exc)
                continue
            record["parse_ok"] = audit["parse_ok"] = True
            try:
                pi = validate(self.schema, obj)
            except ValidationError as exc:
                errors = [v.to_dict() for v in exc.violations]
                record["validation_errors"] = audit["validation_errors"] = errors
                reason = "; ".join(f"{v.field}: {v.code}" for v in exc.violations[:5])
                continue
            audit["validation_errors"] = []
            return TunerResult(pi, audit, usage)
        audit["fallback"] = True
        return TunerResult(self.fallback, audit, usage)


def jpe_emit_control(
    parent_text: str,
    label: Label,
    context: ContextSnapshot,
    ledger_rows: Sequence[LedgerRow],
    config: JPEConfig,
    backend: Backend,
    schema: ControlSchema,
    r: float = 0.15,
) -> tuple[ControlVector, dict]:
    """One emitter call followed by trust-region projection around the fallback."""
    tuner = JPETuner(schema, backend, config, ledger_rows)
    result = tuner.propose(parent_text, label, context)
    report = project_trust_region_report(schema, result.pi, tuner.fallback, r)
    audit = dict(result.audit or {})
    audit["projected_coords"] = list(report.moved)
    audit["usage"] = [u.to_dict() for u in result.usage]
    return report.result, audit
