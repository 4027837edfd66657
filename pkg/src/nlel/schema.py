"""Control-vector schema: strict validation, normalized l-infinity geometry,
trust-region projection and quantization.

Every control field maps to one or more coordinates of the unit box. Distances
between control vectors are the sup-norm over those coordinates, which is the
geometry the trust region and the distortion bounds are stated in.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

KINDS = ("continuous", "integer", "boolean", "simplex_weights", "enum")
PROVENANCES = ("default", "emitted", "projected", "clamped_budget")

# Fields the search engine actuates; any schema driving a run must carry them.
ENGINE_FIELDS = (
    "temperature",
    "top_p",
    "max_tokens",
    "repetition_penalty",
    "branch_quota",
    "beta",
    "gen_count",
    "retrieval_weights",
    "verify_passes",
    "verify_strictness",
)
DECODING_FIELDS = ("temperature", "top_p", "max_tokens", "repetition_penalty")
NO_RETRIEVAL = "none"

SIMPLEX_TOL = 1e-9
# Integer rounding after clamping is done with this much float forgiveness so
# that a band edge computed as 2.9999999999 still admits the integer 3.
_INT_EPS = 1e-9


class SchemaError(ValueError):
    """The schema document itself is malformed."""


class SchemaMismatchError(ValueError):
    """Two control vectors (or a vector and a schema) come from different schemas."""


@dataclass(frozen=True)
class Violation:
    field: str
    code: str
    message: str

    def to_dict(self) -> dict[str, str]:
        return {"field": self.field, "code": self.code, "message": self.message}


class ValidationError(ValueError):
    """Raised by :func:`validate`; carries the complete list of violations."""

    def __init__(self, violations: Sequence[Violation]):
        self.violations = list(violations)
        summary = "; ".join(f"{v.field}: {v.code}" for v in self.violations)
        super().__init__(f"{len(self.violations)} violation(s): {summary}")


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _is_finite(value: int | float) -> bool:
    # ints are exact and always finite; math.isfinite would overflow on huge ones
    return isinstance(value, int) or math.isfinite(value)


@dataclass(frozen=True)
class FieldSpec:
    """One control field.

    ``choices`` holds enum members for ``enum`` fields and corpus names for
    ``simplex_weights`` fields; it is empty otherwise.
    """

    name: str
    kind: str
    lower: float = 0.0
    upper: float = 1.0
    default: Any = None
    quant_bits: int | None = None
    choices: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.name or not self.name.isidentifier():
            raise SchemaError(f"field name {self.name!r} is not an identifier")
        if self.kind not in KINDS:
            raise SchemaError(f"{self.name}: unknown kind {self.kind!r}")
        if self.quant_bits is not None and (not isinstance(self.quant_bits, int) or self.quant_bits < 1):
            raise SchemaError(f"{self.name}: quant_bits must be a positive integer")
        object.__setattr__(self, "choices", tuple(self.choices))
        if self.kind in ("continuous", "integer"):
            if not (_is_number(self.lower) and _is_number(self.upper)) or not self.lower < self.upper:
                raise SchemaError(f"{self.name}: need lower < upper, got [{self.lower}, {self.upper}]")
            if self.kind == "integer" and (self.lower != int(self.lower) or self.upper != int(self.upper)):
                raise SchemaError(f"{self.name}: integer bounds must be integral")
        elif self.kind == "boolean":
            object.__setattr__(self, "lower", 0.0)
            object.__setattr__(self, "upper", 1.0)
        elif self.kind in ("enum", "simplex_weights"):
            if not self.choices or len(set(self.choices)) != len(self.choices):
                raise SchemaError(f"{self.name}: choices must be non-empty and unique")
            object.__setattr__(self, "lower", 0.0)
            object.__setattr__(self, "upper", 1.0)
        value, problems = check_field_value(self, self.default)
        if problems:
            raise SchemaError(f"{self.name}: invalid default ({problems[0].message})")
        object.__setattr__(self, "default", value)

    @property
    def span(self) -> float:
        return float(self.upper - self.lower)

    @property
    def quantizable(self) -> bool:
        return self.kind == "continuous"

    def coordinate_names(self) -> list[str]:
        if self.kind == "simplex_weights":
            return [f"{self.name}.{c}" for c in self.choices]
        return [self.name]

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"name": self.name, "kind": self.kind}
        if self.kind in ("continuous", "integer"):
            out["lower"] = self.lower
            out["upper"] = self.upper
        if self.choices:
            out["choices"] = list(self.choices)
        out["default"] = dict(self.default) if isinstance(self.default, dict) else self.default
        if self.quant_bits is not None:
            out["quant_bits"] = self.quant_bits
        return out


def check_field_value(spec: FieldSpec, value: Any) -> tuple[Any, list[Violation]]:
    """Type- and bound-check one value; returns (canonical value, violations)."""
    name = spec.name
    if spec.kind == "continuous":
        if not _is_number(value) or not _is_finite(value):
            return None, [Violation(name, "type", f"expected a finite number, got {value!r}")]
        if not spec.lower <= value <= spec.upper:
            return None, [Violation(name, "out-of-bounds", f"{value} not in [{spec.lower}, {spec.upper}]")]
        return float(value), []
    if spec.kind == "integer":
        if not _is_number(value) or not _is_finite(value) or value != int(value):
            return None, [Violation(name, "type", f"expected an integer, got {value!r}")]
        if not spec.lower <= value <= spec.upper:
            return None, [Violation(name, "out-of-bounds", f"{value} not in [{int(spec.lower)}, {int(spec.upper)}]")]
        return int(value), []
    if spec.kind == "boolean":
        if not isinstance(value, bool):
            return None, [Violation(name, "type", f"expected a boolean, got {value!r}")]
        return value, []
    if spec.kind == "enum":
        if not isinstance(value, str) or value not in spec.choices:
            return None, [Violation(name, "type", f"expected one of {list(spec.choices)}, got {value!r}")]
        return value, []
    # simplex_weights: a partial mapping is allowed, absent corpora carry zero mass
    if not isinstance(value, Mapping):
        return None, [Violation(name, "type", f"expected an object of weights, got {value!r}")]
    problems: list[Violation] = []
    weights = {c: 0.0 for c in spec.choices}
    for key, w in value.items():
        if key not in weights:
            problems.append(Violation(name, "unknown-category", f"unknown corpus {key!r}"))
            continue
        if not _is_number(w) or not _is_finite(w):
            problems.append(Violation(name, "type", f"weight for {key!r} is not a finite number"))
            continue
        if not 0.0 <= w <= 1.0:
            problems.append(Violation(name, "out-of-bounds", f"weight for {key!r} = {w} not in [0, 1]"))
            continue
        weights[key] = float(w)
    if not problems and abs(sum(weights.values()) - 1.0) > SIMPLEX_TOL:
        problems.append(Violation(name, "simplex-sum", f"weights sum to {sum(weights.values())!r}, not 1"))
    return (None, problems) if problems else (weights, [])


@dataclass(frozen=True)
class ControlVector:
    """A complete, in-bounds assignment of every schema field.

    Instances are treated as immutable values; use :meth:`replace` to derive
    a modified copy.
    """

    values: dict[str, Any]
    provenance: str = "emitted"
    schema_version: str = "v1"

    def __post_init__(self) -> None:
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")

    def __getitem__(self, name: str) -> Any:
        return self.values[name]

    def get(self, name: str, default: Any = None) -> Any:
        return self.values.get(name, default)

    def to_dict(self) -> dict[str, Any]:
        return {k: (dict(v) if isinstance(v, dict) else v) for k, v in self.values.items()}

    def replace(self, provenance: str | None = None, **updates: Any) -> ControlVector:
        values = self.to_dict()
        values.update(updates)
        return ControlVector(values, provenance or self.provenance, self.schema_version)


@dataclass(frozen=True)
class ControlSchema:
    fields: tuple[FieldSpec, ...]
    version: str = "v1"

    def __post_init__(self) -> None:
        object.__setattr__(self, "fields", tuple(self.fields))
        names = [f.name for f in self.fields]
        if len(set(names)) != len(names):
            raise SchemaError("field names must be unique")
        if not self.fields:
            raise SchemaError("schema has no fields")

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.fields]

    def field(self, name: str) -> FieldSpec:
        for spec in self.fields:
            if spec.name == name:
                return spec
        raise KeyError(name)

    def __contains__(self, name: str) -> bool:
        return any(f.name == name for f in self.fields)

    def defaults(self) -> ControlVector:
        """The safe default vector (the trust-region centre)."""
        return ControlVector(
            {f.name: (dict(f.default) if isinstance(f.default, dict) else f.default) for f in self.fields},
            "default",
            self.version,
        )

    def coordinate_names(self) -> list[str]:
        return [c for f in self.fields for c in f.coordinate_names()]

    def require_fields(self, names: Sequence[str] = ENGINE_FIELDS) -> None:
        missing = [n for n in names if n not in self]
        if missing:
            raise SchemaError(f"schema {self.version} lacks required fields: {', '.join(missing)}")

    def with_default(self, **overrides: Any) -> ControlSchema:
        """Copy of the schema with selected defaults replaced."""
        fields = []
        for spec in self.fields:
            if spec.name in overrides:
                d = spec.to_dict()
                d["default"] = overrides[spec.name]
                spec = field_from_dict(d)
            fields.append(spec)
        return ControlSchema(tuple(fields), self.version)

    def to_dict(self) -> dict[str, Any]:
        return {"version": self.version, "fields": [f.to_dict() for f in self.fields]}


def field_from_dict(doc: Mapping[str, Any]) -> FieldSpec:
    known = {"name", "kind", "lower", "upper", "default", "quant_bits", "choices"}
    extra = set(doc) - known
    if extra:
        raise SchemaError(f"unknown field-spec keys: {sorted(extra)}")
    try:
        return FieldSpec(
            name=doc["name"],
            kind=doc["kind"],
            lower=doc.get("lower", 0.0),
            upper=doc.get("upper", 1.0),
            default=doc.get("default"),
            quant_bits=doc.get("quant_bits"),
            choices=tuple(doc.get("choices", ())),
        )
    except KeyError as exc:
        raise SchemaError(f"field spec missing {exc.args[0]!r}") from None


def schema_from_dict(doc: Mapping[str, Any]) -> ControlSchema:
    if "fields" not in doc:
        raise SchemaError("schema document has no 'fields'")
    return ControlSchema(tuple(field_from_dict(f) for f in doc["fields"]), str(doc.get("version", "v1")))


def load_schema(path: str | Path) -> ControlSchema:
    return schema_from_dict(json.loads(Path(path).read_text()))


def canonical_schema() -> ControlSchema:
    """The engine's shipped v1 schema."""
    text = resources.files("nlel").joinpath("data/control_v1.json").read_text()
    return schema_from_dict(json.loads(text))


# -- validation -------------------------------------------------------------


def find_violations(schema: ControlSchema, raw: Any) -> list[Violation]:
    return _check(schema, raw)[1]


def _check(schema: ControlSchema, raw: Any) -> tuple[dict[str, Any], list[Violation]]:
    if not isinstance(raw, Mapping):
        return {}, [Violation("*", "not-an-object", f"expected a field-value object, got {type(raw).__name__}")]
    problems: list[Violation] = []
    values: dict[str, Any] = {}
    for spec in schema.fields:
        if spec.name not in raw:
            problems.append(Violation(spec.name, "missing", "field is required"))
            continue
        value, issues = check_field_value(spec, raw[spec.name])
        problems.extend(issues)
        if not issues:
            values[spec.name] = value
    for key in raw:
        if key not in schema:
            problems.append(Violation(str(key), "unknown-field", "not declared by the schema"))
    return values, problems


def validate(schema: ControlSchema, raw: Any, provenance: str = "emitted") -> ControlVector:
    """Strictly validate a parsed field-value map into a :class:`ControlVector`.

    Raises :class:`ValidationError` listing every violation (missing fields,
    type mismatches, bound violations, simplex-sum errors, unknown fields).
    """
    values, problems = _check(schema, raw)
    if problems:
        raise ValidationError(problems)
    return ControlVector(values, provenance, schema.version)


def _parse_constant(token: str) -> Any:
    raise ValueError(f"non-finite JSON constant {token}")


def _no_duplicates(pairs: list[tuple[str, Any]]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for key, value in pairs:
        if key in out:
            raise ValueError(f"duplicate key {key!r}")
        out[key] = value
    return out


def strict_json_loads(text: str) -> Any:
    """``json.loads`` that rejects NaN/Infinity and duplicate keys."""
    return json.loads(text, parse_constant=_parse_constant, object_pairs_hook=_no_duplicates)


def to_wire(pi: ControlVector) -> str:
    """Serialize as the flat JSON object the parameter emitter speaks."""
    return json.dumps(pi.to_dict(), separators=(",", ":"))


def from_wire(schema: ControlSchema, text: str) -> ControlVector:
    try:
        raw = strict_json_loads(text)
    except ValueError as exc:
        raise ValidationError([Violation("*", "parse", str(exc))]) from None
    return validate(schema, raw)


def render_schema_doc(schema: ControlSchema) -> str:
    """Concise human-readable schema listing used inside prompts."""
    lines = [f"control schema {schema.version}; reply with ONE JSON object containing every field:"]
    for f in schema.fields:
        if f.kind == "continuous":
            lines.append(f"- {f.name}: number in [{f.lower:g}, {f.upper:g}], default {f.default:g}")
        elif f.kind == "integer":
            lines.append(f"- {f.name}: integer in [{int(f.lower)}, {int(f.upper)}], default {f.default}")
        elif f.kind == "boolean":
            lines.append(f"- {f.name}: boolean, default {json.dumps(f.default)}")
        elif f.kind == "enum":
            lines.append(f"- {f.name}: one of {list(f.choices)}, default {f.default!r}")
        else:
            lines.append(
                f"- {f.name}: weights over {list(f.choices)} (non-negative, sum 1), "
                f"default {json.dumps(f.default, separators=(',', ':'))}"
            )
    return "\n".join(lines)


# -- geometry ---------------------------------------------------------------


def _check_version(schema: ControlSchema, *vectors: ControlVector) -> None:
    for pi in vectors:
        if pi.schema_version != schema.version:
            raise SchemaMismatchError(f"vector from schema {pi.schema_version!r} used with schema {schema.version!r}")


def _field_coords(spec: FieldSpec, value: Any) -> list[float]:
    if spec.kind in ("continuous", "integer"):
        return [(value - spec.lower) / spec.span]
    if spec.kind == "boolean":
        return [1.0 if value else 0.0]
    if spec.kind == "enum":
        n = len(spec.choices)
        return [spec.choices.index(value) / (n - 1) if n > 1 else 0.0]
    return [float(value[c]) for c in spec.choices]


def normalize(schema: ControlSchema, pi: ControlVector) -> np.ndarray:
    """Map a control vector into unit-box coordinates (see :meth:`ControlSchema.coordinate_names`)."""
    _check_version(schema, pi)
    return np.array([u for spec in schema.fields for u in _field_coords(spec, pi[spec.name])], dtype=float)


def distance(schema: ControlSchema, a: ControlVector, b: ControlVector) -> float:
    """Schema-normalized l-infinity distance."""
    _check_version(schema, a, b)
    return float(np.max(np.abs(normalize(schema, a) - normalize(schema, b))))


def _round_toward(value: float, anchor: float) -> int:
    if value >= anchor:
        return int(math.floor(value + _INT_EPS))
    return int(math.ceil(value - _INT_EPS))


def _project_simplex_box(w: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Closest point (Euclidean) to ``w`` in {x : lo <= x <= hi, sum x = 1}.

    The solution has the form clip(w - t, lo, hi); ``t`` is found by bisection.
    """
    t_lo = float(np.min(w - hi)) - 1.0
    t_hi = float(np.max(w - lo)) + 1.0
    for _ in range(200):
        t = 0.5 * (t_lo + t_hi)
        if np.clip(w - t, lo, hi).sum() > 1.0:
            t_lo = t
        else:
            t_hi = t
    x = np.clip(w - 0.5 * (t_lo + t_hi), lo, hi)
    # spread the residual over components that still have room
    residual = 1.0 - x.sum()
    room = (hi - x) if residual > 0 else (x - lo)
    if room.sum() > 0:
        x = x + residual * room / room.sum()
    return np.clip(x, lo, hi)


@dataclass(frozen=True)
class ProjectionReport:
    result: ControlVector
    moved: tuple[str, ...]
    distance_to_default: float
    slack: float  # excess of distance_to_default over the radius (rounding only)


def project_trust_region_report(
    schema: ControlSchema, pi: ControlVector, pi0: ControlVector, r: float
) -> ProjectionReport:
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"trust radius must lie in [0, 1], got {r}")
    _check_version(schema, pi, pi0)
    values: dict[str, Any] = {}
    moved: list[str] = []
    for spec in schema.fields:
        v, v0 = pi[spec.name], pi0[spec.name]
        if spec.kind == "continuous":
            lo = max(spec.lower, v0 - r * spec.span)
            hi = min(spec.upper, v0 + r * spec.span)
            new = v0 if r == 0.0 else min(max(v, lo), hi)
        elif spec.kind == "integer":
            lo = max(spec.lower, v0 - r * spec.span)
            hi = min(spec.upper, v0 + r * spec.span)
            new = v if lo - _INT_EPS <= v <= hi + _INT_EPS else _round_toward(min(max(v, lo), hi), v0)
        elif spec.kind == "boolean":
            new = v if abs(float(v) - float(v0)) <= r else v0
        elif spec.kind == "enum":
            n = len(spec.choices)
            i, i0 = spec.choices.index(v), spec.choices.index(v0)
            reach = r * (n - 1)
            new = v if abs(i - i0) <= reach + _INT_EPS else spec.choices[_round_toward(i0 + math.copysign(reach, i - i0), i0)]
        else:
            w = np.array([v[c] for c in spec.choices])
            w0 = np.array([v0[c] for c in spec.choices])
            lo = np.clip(w0 - r, 0.0, 1.0)
            hi = np.clip(w0 + r, 0.0, 1.0)
            if np.all(w >= lo) and np.all(w <= hi):
                new = dict(v)
            else:
                x = w0.copy() if r == 0.0 else _project_simplex_box(w, lo, hi)
                new = {c: float(x[j]) for j, c in enumerate(spec.choices)}
        if new != v:
            moved.append(spec.name)
        values[spec.name] = new
    provenance = "projected" if moved else pi.provenance
    result = ControlVector(values, provenance, schema.version)
    d0 = distance(schema, result, pi0)
    return ProjectionReport(result, tuple(moved), d0, max(0.0, d0 - r))


def project_trust_region(schema: ControlSchema, pi: ControlVector, pi0: ControlVector, r: float) -> ControlVector:
    """Clamp ``pi`` into the l-infinity ball of radius ``r`` (normalized units) around ``pi0``.

    Integer and enum coordinates are rounded toward ``pi0``, so they never leave
    the ball. Simplex weights are clamped per component and re-normalized by a
    uniform shift that respects the clamp, so the result still sums to one.
    Vectors already inside the ball are returned unchanged, provenance included.
    """
    return project_trust_region_report(schema, pi, pi0, r).result


# -- quantization -----------------------------------------------------------


def quantize(
    schema: ControlSchema, pi: ControlVector, per_field_bits: Mapping[str, int] | None = None
) -> tuple[ControlVector, float]:
    """Snap continuous fields to ``2**bits`` uniform levels spanning their bounds.

    With ``per_field_bits=None`` the schema's own ``quant_bits`` are used. Ties
    go to the level nearer the schema default. Returns the quantized vector and
    the realized sup-norm grid step ``delta`` (0 when nothing is quantized).
    """
    _check_version(schema, pi)
    if per_field_bits is None:
        per_field_bits = {f.name: f.quant_bits for f in schema.fields if f.quant_bits is not None}
    defaults = schema.defaults()
    values = pi.to_dict()
    delta = 0.0
    for name, bits in per_field_bits.items():
        spec = schema.field(name)
        if not spec.quantizable:
            raise ValueError(f"{name}: only continuous fields can be quantized (kind {spec.kind})")
        if not isinstance(bits, int) or bits < 1:
            raise ValueError(f"{name}: bits must be a positive integer")
        steps = 2**bits - 1
        delta = max(delta, 1.0 / steps)
        u = (values[name] - spec.lower) / spec.span
        u0 = (defaults[name] - spec.lower) / spec.span
        lo_k = min(max(math.floor(u * steps), 0), steps)
        hi_k = min(lo_k + 1, steps)
        d_lo, d_hi = abs(u - lo_k / steps), abs(hi_k / steps - u)
        if abs(d_lo - d_hi) <= 1e-12:
            k = lo_k if abs(lo_k / steps - u0) <= abs(hi_k / steps - u0) else hi_k
        else:
            k = lo_k if d_lo < d_hi else hi_k
        level = spec.lower + spec.span * k / steps
        if abs(level - values[name]) > 1e-15 * max(1.0, abs(level)):
            values[name] = min(max(level, spec.lower), spec.upper)
    return ControlVector(values, pi.provenance, schema.version), delta


def grid_step(schema: ControlSchema, per_field_bits: Mapping[str, int]) -> float:
    """The sup-norm step delta implied by a bit allocation."""
    return max((1.0 / (2**b - 1) for b in per_field_bits.values()), default=0.0)
