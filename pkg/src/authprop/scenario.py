"""Versioned scenario files: the declarative input format for runs.

A scenario is a single JSON document carrying everything one workflow run
needs: the catalog, the initial authorization tuples, the delegation plan,
the workflow graph, the execution config, aggregation rules, scheduled
revocation events, and optional fault injections. Validation happens in two
passes: JSON-schema shape first, then cross-reference resolution (every
subject, resource, token, and event target must resolve). Both passes
report diagnostics as data; load_scenario raises InvalidScenario carrying
the full list.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources as importlib_resources
from pathlib import Path
from typing import Any, Mapping

import jsonschema

from .aggregation import AggregationPolicy
from .delegation import ValiditySpec
from .errors import InvalidScenario
from .model import Catalog, Scope, catalog_validate
from .store import AuthorizationTuple, relation_from_json
from .workflow import (
    ActionVertex,
    OnDeny,
    TemporalPolicy,
    WorkflowGraph,
    validate_dag,
)

SCHEMA_VERSION = 1

_SCHEMA: dict | None = None


def scenario_schema() -> dict:
    """The bundled JSON schema for scenario files."""
    global _SCHEMA
    if _SCHEMA is None:
        text = (
            importlib_resources.files("authprop")
            .joinpath("schemas/scenario.schema.json")
            .read_text(encoding="utf-8")
        )
        _SCHEMA = json.loads(text)
    return _SCHEMA


@dataclass(frozen=True)
class TupleSpec:
    label: str
    tuple: AuthorizationTuple


@dataclass(frozen=True)
class DelegationStep:
    step: str  # "mint" | "attenuate"
    token_id: str
    scope: Scope
    validity: ValiditySpec
    at: int
    issuer: str | None = None
    parent: str | None = None
    subject: str | None = None


@dataclass(frozen=True)
class EventSpec:
    kind: str  # revoke_tuple | revoke_token | revoke_principal
    at: int
    target: str


@dataclass(frozen=True)
class FaultSpec:
    kind: str  # scope_widening_fallback | nominal_delegation | stale_tuple_race
    vertex: str | None = None
    token: str | None = None
    target: str | None = None
    at: int | None = None


@dataclass(frozen=True)
class Scenario:
    scenario_id: str
    description: str
    catalog: Catalog
    tuples: tuple[TupleSpec, ...]
    delegation_plan: tuple[DelegationStep, ...]
    graph: WorkflowGraph
    temporal_policy: TemporalPolicy | None
    on_deny: OnDeny
    aggregation_policy: AggregationPolicy
    events: tuple[EventSpec, ...]
    faults: tuple[FaultSpec, ...]
    expected: Mapping[str, Any] | None


def _schema_diagnostics(doc: Any) -> list[str]:
    validator = jsonschema.Draft202012Validator(scenario_schema())
    out = []
    for error in sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path)):
        where = "/".join(str(p) for p in error.absolute_path) or "<root>"
        out.append(f"schema: {where}: {error.message}")
    return out


def _semantic_diagnostics(doc: Mapping) -> list[str]:
    """Cross-reference checks a schema cannot express."""
    out: list[str] = []
    catalog = Catalog.from_json(doc["catalog"])
    for violation in catalog_validate(catalog):
        out.append(f"catalog: {violation.code}: {violation.detail}")
    principal_ids = {p["id"] for p in doc["catalog"]["principals"]}
    resource_ids = {r["id"] for r in doc["catalog"]["resources"]}

    tuple_labels: set[str] = set()
    for i, spec in enumerate(doc["tuples"]):
        label = spec["label"]
        if label in tuple_labels:
            out.append(f"tuples/{i}: duplicate tuple label {label!r}")
        tuple_labels.add(label)
        relation = spec["relation"]
        rid = relation.get("resource")
        if rid is not None and rid not in resource_ids:
            out.append(f"tuples/{i}: unknown resource {rid!r}")
        vf = spec.get("valid_from", 0)
        vu = spec.get("valid_until")
        if vu is not None and vu <= vf:
            out.append(f"tuples/{i}: empty validity window [{vf}, {vu})")

    token_ids: set[str] = set()
    for i, step in enumerate(doc["tokens"]):
        tid = step["token_id"]
        if tid in token_ids:
            out.append(f"tokens/{i}: duplicate token id {tid!r}")
        token_ids.add(tid)
        for rid, _action in step["scope"]:
            if rid not in resource_ids:
                out.append(f"tokens/{i}: scope names unknown resource {rid!r}")
        if step["step"] == "mint":
            if step["issuer"] not in principal_ids:
                out.append(f"tokens/{i}: unknown issuer {step['issuer']!r}")
        else:
            if step["parent"] not in token_ids - {tid}:
                out.append(f"tokens/{i}: parent {step['parent']!r} not defined earlier")
            if step["subject"] not in principal_ids:
                out.append(f"tokens/{i}: unknown subject {step['subject']!r}")

    graph = doc["graph"]
    vertex_ids = {v["id"] for v in graph["vertices"]}
    if graph["initiator"] not in principal_ids:
        out.append(f"graph: unknown initiator {graph['initiator']!r}")
    for v in graph["vertices"]:
        if v["agent"] not in principal_ids:
            out.append(f"graph/{v['id']}: unknown agent {v['agent']!r}")
        if v["token"] not in token_ids:
            out.append(f"graph/{v['id']}: token {v['token']!r} not in the delegation plan")
        if v["kind"] == "retrieve" and v.get("resource") not in resource_ids:
            out.append(f"graph/{v['id']}: unknown resource {v.get('resource')!r}")
        if v["kind"] == "return" and v.get("recipient") not in principal_ids:
            out.append(f"graph/{v['id']}: unknown recipient {v.get('recipient')!r}")
    parsed_graph = _parse_graph(graph)
    for violation in validate_dag(parsed_graph):
        out.append(f"graph: {violation.code}: {violation.detail}")

    last_at = 0
    for i, event in enumerate(doc.get("events", ())):
        if event["at"] < last_at:
            out.append(f"events/{i}: event ticks must be non-decreasing")
        last_at = event["at"]
        kind, target = event["kind"], event["target"]
        if kind == "revoke_tuple" and target not in tuple_labels:
            out.append(f"events/{i}: unknown tuple label {target!r}")
        elif kind == "revoke_token" and target not in token_ids:
            out.append(f"events/{i}: unknown token {target!r}")
        elif kind == "revoke_principal" and target not in principal_ids:
            out.append(f"events/{i}: unknown principal {target!r}")

    for i, fault in enumerate(doc.get("faults", ())):
        kind = fault["kind"]
        if kind == "scope_widening_fallback" and fault["vertex"] not in vertex_ids:
            out.append(f"faults/{i}: unknown vertex {fault['vertex']!r}")
        elif kind == "nominal_delegation" and fault["token"] not in token_ids:
            out.append(f"faults/{i}: unknown token {fault['token']!r}")
        elif kind == "stale_tuple_race" and fault["target"] not in tuple_labels:
            out.append(f"faults/{i}: unknown tuple label {fault['target']!r}")
    return out


def validate_scenario(doc: Any) -> list[str]:
    """All diagnostics for a scenario document; empty means loadable."""
    diagnostics = _schema_diagnostics(doc)
    if diagnostics:
        return diagnostics
    return _semantic_diagnostics(doc)


def _parse_graph(data: Mapping) -> WorkflowGraph:
    return WorkflowGraph(
        workflow_id=data["workflow_id"],
        initiator=data["initiator"],
        vertices=tuple(ActionVertex.from_json(v) for v in data["vertices"]),
        edges=tuple((a, b) for a, b in data["edges"]),
    )


def parse_scenario(doc: Mapping) -> Scenario:
    """Parse an already-validated document into a Scenario."""
    catalog = Catalog.from_json(doc["catalog"])
    tuples = tuple(
        TupleSpec(
            label=spec["label"],
            tuple=AuthorizationTuple(
                subject=spec["subject"],
                relation=relation_from_json(spec["relation"]),
                valid_from=spec.get("valid_from", 0),
                valid_until=spec.get("valid_until"),
            ),
        )
        for spec in doc["tuples"]
    )
    plan = tuple(
        DelegationStep(
            step=step["step"],
            token_id=step["token_id"],
            scope=Scope.from_json(step["scope"]),
            validity=ValiditySpec.from_json(step["validity"]),
            at=step.get("at", 0),
            issuer=step.get("issuer"),
            parent=step.get("parent"),
            subject=step.get("subject"),
        )
        for step in doc["tokens"]
    )
    config = doc.get("config", {})
    policy = config.get("temporal_policy")
    events = tuple(
        EventSpec(kind=e["kind"], at=e["at"], target=e["target"])
        for e in doc.get("events", ())
    )
    faults = tuple(
        FaultSpec(
            kind=f["kind"],
            vertex=f.get("vertex"),
            token=f.get("token"),
            target=f.get("target"),
            at=f.get("at"),
        )
        for f in doc.get("faults", ())
    )
    return Scenario(
        scenario_id=doc["scenario_id"],
        description=doc.get("description", ""),
        catalog=catalog,
        tuples=tuples,
        delegation_plan=plan,
        graph=_parse_graph(doc["graph"]),
        temporal_policy=TemporalPolicy(policy) if policy is not None else None,
        on_deny=OnDeny(config.get("on_deny", "fail_workflow")),
        aggregation_policy=AggregationPolicy.from_json(doc.get("aggregation_policy", {})),
        events=events,
        faults=faults,
        expected=doc.get("expected"),
    )


def load_scenario(source: str | Path | Mapping) -> Scenario:
    """Load and validate a scenario from a file path or parsed document."""
    if isinstance(source, Mapping):
        doc: Any = source
    else:
        path = Path(source)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise InvalidScenario(f"cannot read scenario file: {exc}", (str(exc),)) from exc
        except json.JSONDecodeError as exc:
            raise InvalidScenario(f"scenario file is not valid JSON: {exc}", (str(exc),)) from exc
    diagnostics = validate_scenario(doc)
    if diagnostics:
        raise InvalidScenario(
            f"scenario failed validation with {len(diagnostics)} diagnostic(s): "
            + "; ".join(diagnostics[:3]),
            tuple(diagnostics),
        )
    return parse_scenario(doc)
