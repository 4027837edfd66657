"""Command-line entry point: ``nlel run|replay|check-theory|ablate|validate-schema``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

from .metrics import BUDGET_MULTIPLIERS, report_from_traces
from .runner import ABLATION_GRID, ConfigError, RunConfig, ablate, dumps_rows, execute
from .schema import SchemaError, ValidationError, find_violations, load_schema, strict_json_loads
from .theory import SUITES, check_theory, format_results
from .trace import read_trace

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _load_config(path: str | None, overrides: dict) -> RunConfig:
    base = RunConfig.load(path).to_dict() if path else RunConfig().to_dict()
    base.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict(base)


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config, {"output_dir": args.output_dir, "policy": args.policy})
    out = execute(cfg)
    doc = out.report.to_dict()
    print(f"policy={cfg.policy} config_digest={cfg.digest()} output_dir={cfg.output_dir}")
    for key, acc in doc["success_at_compute"].items():
        print(f"success@compute[{key}] = {acc}")
    print(f"tokens_per_success = {doc['tokens_per_success']}")
    print(f"failed_instances = {len(out.failed)}")
    return EXIT_OK


def cmd_replay(args: argparse.Namespace) -> int:
    root = Path(args.run_dir)
    config = json.loads((root / "config.json").read_text())
    limit = args.token_limit or config["token_limit"]
    paths = sorted((root / "traces").glob("seed*/instance*.jsonl"))
    if not paths:
        print(f"no traces under {root / 'traces'}", file=sys.stderr)
        return EXIT_USAGE
    traces = [read_trace(p) for p in paths]
    report = report_from_traces(
        traces, limit, args.multipliers or BUDGET_MULTIPLIERS, config["resample_seed"], config["n_resamples"]
    )
    print(json.dumps(report.to_dict(), sort_keys=True, indent=2))
    return EXIT_OK


def cmd_check_theory(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config, {}) if args.config else None
    results = check_theory(cfg, args.suite or SUITES, quick=args.quick)
    print(format_results(results))
    failed = [r.suite for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} suites passed")
    return EXIT_FAIL if failed else EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config, {})
    text = dumps_rows(ablate(cfg, args.axis or tuple(ABLATION_GRID)))
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_validate_schema(args: argparse.Namespace) -> int:
    try:
        schema = load_schema(args.schema)
    except (OSError, ValueError, SchemaError) as exc:
        print(f"invalid schema: {exc}", file=sys.stderr)
        return EXIT_FAIL
    print(f"schema {schema.version}: {len(schema.fields)} fields ok")
    if args.controls:
        try:
            raw = strict_json_loads(Path(args.controls).read_text())
        except (OSError, ValueError) as exc:
            print(f"controls: {exc}", file=sys.stderr)
            return EXIT_FAIL
        problems = find_violations(schema, raw)
        for v in problems:
            print(f"  {v.field}: {v.code} ({v.message})")
        if problems:
            return EXIT_FAIL
        print("controls ok")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nlel", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a policy over seeds x instances and write traces and a report")
    p.add_argument("--config", help="JSON run config")
    p.add_argument("--output-dir")
    p.add_argument("--policy")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("replay", help="recompute metrics from a run directory's traces")
    p.add_argument("run_dir")
    p.add_argument("--token-limit", type=int, help="reference budget (defaults to the run's)")
    p.add_argument("--multipliers", type=float, nargs="+")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("check-theory", help="run the property suites; nonzero exit on any failure")
    p.add_argument("--config", help="JSON run config for the search-based suites")
    p.add_argument("--suite", action="append", choices=SUITES)
    p.add_argument("--quick", action="store_true", help="smaller samples")
    p.set_defaults(func=cmd_check_theory)

    p = sub.add_parser("ablate", help="one-at-a-time sweeps over radius, ledger size, bits and annealing")
    p.add_argument("--config", help="JSON run config")
    p.add_argument("--axis", action="append", choices=tuple(ABLATION_GRID))
    p.add_argument("--out", help="also write the JSONL rows here")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("validate-schema", help="check a control schema and optionally a control vector")
    p.add_argument("schema")
    p.add_argument("--controls", help="JSON control vector to validate against the schema")
    p.set_defaults(func=cmd_validate_schema)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print("usage error: invalid config", file=sys.stderr)
        for problem in exc.problems:
            print(f"  {problem}", file=sys.stderr)
        return EXIT_USAGE
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_FAIL
