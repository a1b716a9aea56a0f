"""Command-line interface: validate and run scenarios, audit traces,
compute taint reports, and run revocation-race sweeps.

Exit codes separate authorization outcomes from tool misuse:

  0  workflow completed (possibly partial) / trace clean / report printed
  1  workflow denied (an authorization outcome, not an error)
  2  invalid input (bad scenario, bad parameters, bad taint origin)
  3  trace integrity failure (hash chain or file framing broken)
  4  audit found violations

Scenario paths may use the bundled corpus with the "corpus:" prefix, e.g.
"corpus:due_diligence". Nothing authorization-relevant is read from the
environment; every input is a file or a flag.
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources as importlib_resources
from pathlib import Path
from typing import Sequence

from .audit import audit, taint
from .errors import BrokenTrace, InvalidScenario, NotAnAccessRecord
from .scenario import load_scenario, validate_scenario
from .simulator import (
    EngineMode,
    RaceMetrics,
    RevocationRaceConfig,
    race_csv,
    run_scenario,
    sweep,
)
from .trace import read_trace, write_trace
from .workflow import ExecutionResult, ExecutionStatus, TemporalPolicy

EXIT_OK = 0
EXIT_DENIED = 1
EXIT_INVALID = 2
EXIT_BROKEN_TRACE = 3
EXIT_VIOLATIONS = 4


def exit_code_for_status(status: ExecutionStatus) -> int:
    return EXIT_DENIED if status is ExecutionStatus.DENIED else EXIT_OK


def corpus_names() -> list[str]:
    root = importlib_resources.files("authprop").joinpath("scenarios")
    return sorted(p.name[: -len(".json")] for p in root.iterdir() if p.name.endswith(".json"))


def resolve_scenario_path(raw: str) -> Path:
    """Resolve "corpus:<name>" to the bundled file, else return the path."""
    if raw.startswith("corpus:"):
        name = raw[len("corpus:") :]
        if not name.endswith(".json"):
            name += ".json"
        return Path(str(importlib_resources.files("authprop").joinpath(f"scenarios/{name}")))
    return Path(raw)


def _print_diagnostics(diagnostics: Sequence[str]) -> None:
    for diag in diagnostics:
        print(f"  - {diag}", file=sys.stderr)


def cmd_validate(args: argparse.Namespace) -> int:
    path = resolve_scenario_path(args.scenario)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        print(f"invalid: cannot read scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except json.JSONDecodeError as exc:
        print(f"invalid: not valid JSON: {exc}", file=sys.stderr)
        return EXIT_INVALID
    diagnostics = validate_scenario(doc)
    if diagnostics:
        print(f"invalid: {len(diagnostics)} diagnostic(s):", file=sys.stderr)
        _print_diagnostics(diagnostics)
        return EXIT_INVALID
    print(f"scenario ok: {doc['scenario_id']}")
    return EXIT_OK


def _print_result(result: ExecutionResult) -> None:
    print(f"status: {result.status.value}")
    if result.status is ExecutionStatus.DENIED:
        print(f"denied at: {result.denied_at}")
        print(f"reason: {result.deny_reason}")
    if result.excluded:
        print(f"excluded vertices: {', '.join(sorted(result.excluded))}")
    for delivery in result.delivered:
        provenance = ", ".join(sorted(delivery.artifact.provenance)) or "(empty)"
        print(
            f"delivered -> {delivery.recipient}: {delivery.artifact.artifact_id} "
            f"(provenance: {provenance})"
        )
        disclosure = delivery.disclosure
        if disclosure.complete:
            print(f"  disclosure: complete - {disclosure.note}")
        else:
            excluded = ", ".join(disclosure.excluded_vertices)
            resources = ", ".join(disclosure.excluded_resources) or "(none)"
            print(
                f"  disclosure: PARTIAL - {disclosure.note} "
                f"(vertices: {excluded}; sources: {resources})"
            )


def cmd_run(args: argparse.Namespace) -> int:
    if args.policy is None:
        print(
            "error: --policy is required. Evaluation timing (initiation, access, "
            "or completion) is a policy decision; this tool refuses to default it.",
            file=sys.stderr,
        )
        return EXIT_INVALID
    try:
        scenario = load_scenario(resolve_scenario_path(args.scenario))
    except InvalidScenario as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        _print_diagnostics(exc.diagnostics)
        return EXIT_INVALID
    mode = EngineMode.LEGACY_BUGGY if args.mode == "legacy" else EngineMode.COMPLIANT
    try:
        result, trace, metrics = run_scenario(
            scenario, mode, temporal_policy=TemporalPolicy(args.policy)
        )
    except InvalidScenario as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID
    _print_result(result)
    print(
        f"metrics: records={metrics.records} denials={metrics.denials} "
        f"stale_cache_uses={metrics.stale_cache_uses} deliveries={metrics.deliveries} "
        f"excluded={metrics.excluded}"
    )
    if args.out:
        write_trace(trace, args.out)
        print(f"trace written: {args.out}")
    return exit_code_for_status(result.status)


def cmd_audit(args: argparse.Namespace) -> int:
    try:
        trace = read_trace(args.trace)
    except OSError as exc:
        print(f"cannot read trace: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except BrokenTrace as exc:
        print(f"trace integrity failure: {exc}", file=sys.stderr)
        return EXIT_BROKEN_TRACE
    try:
        verdict = audit(trace)
    except BrokenTrace as exc:
        print(f"trace integrity failure: {exc}", file=sys.stderr)
        return EXIT_BROKEN_TRACE
    for sub in (verdict.access, verdict.chain, verdict.aggregation, verdict.delivery):
        state = "clean" if sub.ok else f"{len(sub.violations)} violation(s)"
        print(f"{sub.name}: {state} ({sub.records_checked} check(s))")
    if verdict.ok:
        print("audit: clean")
        return EXIT_OK
    print("audit: violations found")
    for violation in verdict.all_violations():
        print(f"  record {violation.seq}: {violation.code}: {violation.detail}")
    return EXIT_VIOLATIONS


def cmd_taint(args: argparse.Namespace) -> int:
    try:
        trace = read_trace(args.trace)
    except OSError as exc:
        print(f"cannot read trace: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except BrokenTrace as exc:
        print(f"trace integrity failure: {exc}", file=sys.stderr)
        return EXIT_BROKEN_TRACE
    try:
        report = taint(trace, args.origin)
    except NotAnAccessRecord as exc:
        print(f"bad origin: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(f"origin: record {report.origin} (vertex {report.origin_vertex})")
    print(f"tainted vertices: {', '.join(report.tainted_vertices)}")
    artifacts = ", ".join(report.tainted_artifacts) or "(none; the access produced nothing)"
    print(f"tainted artifacts: {artifacts}")
    if report.delivered_tainted:
        print("delivered tainted artifacts (flag for review):")
        for d in report.delivered_tainted:
            print(f"  {d.artifact_id} -> {d.recipient} (at {d.vertex_id})")
    else:
        print("delivered tainted artifacts: none")
    return EXIT_OK


def _print_race_table(rows: Sequence[RaceMetrics]) -> None:
    header = (
        f"{'velocity':>9} {'ttl':>5} {'n':>5} {'revoke':>7} {'horizon':>8} "
        f"{'ttl_admitted':>13} {'exec_admitted':>14} {'ratio':>10}"
    )
    print(header)
    for row in rows:
        ratio = "n/a" if row.ratio is None else f"{float(row.ratio):.2f}"
        print(
            f"{row.velocity:>9} {row.ttl:>5} {row.exec_count:>5} {row.revoke_at:>7} "
            f"{row.horizon:>8} {row.unauthorized_ops_ttl:>13} "
            f"{row.unauthorized_ops_exec:>14} {ratio:>10}"
        )


def cmd_race(args: argparse.Namespace) -> int:
    configs: list[RevocationRaceConfig] = []
    try:
        if args.sweep:
            grid = json.loads(Path(args.sweep).read_text(encoding="utf-8"))
            if not isinstance(grid, list) or not grid:
                print("sweep grid must be a non-empty JSON list", file=sys.stderr)
                return EXIT_INVALID
            for entry in grid:
                configs.append(
                    RevocationRaceConfig(
                        velocity=entry["velocity"],
                        ttl=entry["ttl"],
                        exec_count=entry["exec_count"],
                        revoke_at=entry.get("revoke_at", 1),
                        horizon=entry.get(
                            "horizon", entry.get("revoke_at", 1) + max(entry["ttl"], entry["exec_count"]) + 2
                        ),
                    )
                )
        else:
            missing = [
                flag
                for flag, value in (
                    ("--velocity", args.velocity),
                    ("--ttl", args.ttl),
                    ("--exec-count", args.exec_count),
                )
                if value is None
            ]
            if missing:
                print(
                    f"missing required race parameters: {', '.join(missing)}",
                    file=sys.stderr,
                )
                return EXIT_INVALID
            horizon = args.horizon
            if horizon is None:
                horizon = args.revoke_at + max(args.ttl, args.exec_count) + 2
            configs.append(
                RevocationRaceConfig(
                    velocity=args.velocity,
                    ttl=args.ttl,
                    exec_count=args.exec_count,
                    revoke_at=args.revoke_at,
                    horizon=horizon,
                )
            )
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        print(f"invalid race parameters: {exc}", file=sys.stderr)
        return EXIT_INVALID
    rows = sweep(configs)
    if args.csv == "-":
        print(race_csv(rows), end="")
    else:
        _print_race_table(rows)
        if args.csv:
            Path(args.csv).write_text(race_csv(rows), encoding="utf-8")
            print(f"csv written: {args.csv}")
    if args.plot:
        from .plotting import plot_race

        out = plot_race(rows, args.plot)
        print(f"figure written: {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="authprop",
        description=(
            "Workflow-scoped authorization engine: run scenarios, audit traces, "
            "trace taint, and measure revocation races."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_validate = sub.add_parser("validate", help="validate a scenario file")
    p_validate.add_argument("scenario", help="scenario path or corpus:<name>")
    p_validate.set_defaults(func=cmd_validate)

    p_run = sub.add_parser("run", help="execute a scenario")
    p_run.add_argument("scenario", help="scenario path or corpus:<name>")
    p_run.add_argument(
        "--policy",
        choices=[p.value for p in TemporalPolicy],
        default=None,
        help="when authorization is evaluated (required; no default)",
    )
    p_run.add_argument(
        "--mode",
        choices=["compliant", "legacy"],
        default="compliant",
        help="engine mode (legacy reproduces known-buggy behaviors)",
    )
    p_run.add_argument("--out", default=None, help="write the binary trace here")
    p_run.set_defaults(func=cmd_run)

    p_audit = sub.add_parser("audit", help="audit a trace file offline")
    p_audit.add_argument("trace", help="binary trace path")
    p_audit.set_defaults(func=cmd_audit)

    p_taint = sub.add_parser("taint", help="forward taint from an access record")
    p_taint.add_argument("trace", help="binary trace path")
    p_taint.add_argument(
        "--origin", type=int, required=True, help="seq of the access record to taint from"
    )
    p_taint.set_defaults(func=cmd_taint)

    p_race = sub.add_parser("race", help="run the revocation-race experiment")
    p_race.add_argument("--velocity", type=int, default=None, help="operations per tick")
    p_race.add_argument("--ttl", type=int, default=None, help="wall-clock cache ttl in ticks")
    p_race.add_argument("--exec-count", type=int, default=None, help="execution-count budget n")
    p_race.add_argument("--revoke-at", type=int, default=1, help="revocation tick")
    p_race.add_argument("--horizon", type=int, default=None, help="ticks to simulate")
    p_race.add_argument("--sweep", default=None, help="JSON grid file of race configs")
    p_race.add_argument(
        "--csv",
        nargs="?",
        const="-",
        default=None,
        help="emit CSV (to stdout with bare --csv, else to the given path)",
    )
    p_race.add_argument("--plot", default=None, help="render a figure of the sweep here")
    p_race.set_defaults(func=cmd_race)
    return parser


def entrypoint(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_INVALID
    return args.func(args)


def main() -> None:
    sys.exit(entrypoint())


if __name__ == "__main__":
    main()
