"""Label-conditioned control of tree search over a synthetic reasoning environment."""

from __future__ import annotations

from .ledger import LedgerRow, carveout_advantage, objective_J, pareto_tag
from .policies import DEFAULT_LABEL, JPEConfig, JPETuner, Label, emit_labels, jpe_emit_control
from .runner import RunConfig, execute
from .schema import (
    ControlSchema,
    ControlVector,
    ValidationError,
    canonical_schema,
    distance,
    normalize,
    project_trust_region,
    quantize,
    validate,
)
from .search import RunBudget, SearchEngine, anneal_beta, expansion_bound, score, select_topk, total_compute_envelope
from .synthetic import EnvSpec, SyntheticEnv, default_env_spec
from .theory import check_theory
from .trace import replay

__version__ = "0.1.0"

__all__ = [
    "ControlSchema",
    "ControlVector",
    "DEFAULT_LABEL",
    "EnvSpec",
    "JPEConfig",
    "JPETuner",
    "Label",
    "LedgerRow",
    "RunBudget",
    "RunConfig",
    "SearchEngine",
    "SyntheticEnv",
    "ValidationError",
    "anneal_beta",
    "canonical_schema",
    "carveout_advantage",
    "check_theory",
    "default_env_spec",
    "distance",
    "emit_labels",
    "execute",
    "expansion_bound",
    "jpe_emit_control",
    "normalize",
    "objective_J",
    "pareto_tag",
    "project_trust_region",
    "quantize",
    "replay",
    "score",
    "select_topk",
    "total_compute_envelope",
    "validate",
]
