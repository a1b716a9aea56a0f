"""Provenance tracking and deny-combination rules for synthesized artifacts.

Individually innocuous inputs can compose into something that should not
flow to a given principal. Rules express that as forbidden label sets: a
rule fires when every one of its labels is covered by at least one resource
in the artifact's provenance. The default is allow; rules only deny.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .errors import ForeignArtifact, UnknownResource
from .model import Catalog, PrincipalId, ResourceId

ProvenanceSet = frozenset[ResourceId]


def provenance_union(parts: Iterable[Iterable[ResourceId]]) -> ProvenanceSet:
    """Exact union of the input provenance sets. Nothing is ever dropped."""
    out: set[ResourceId] = set()
    for part in parts:
        out |= set(part)
    return frozenset(out)


@dataclass(frozen=True)
class DenyCombinationRule:
    """Forbid one principal (or anyone) from receiving a label combination.

    applies_to None means the rule applies to every principal. A rule needs
    at least two forbidden labels; single-label restrictions belong in the
    grant layer, not here.
    """

    rule_id: str
    forbidden_labels: frozenset[str]
    applies_to: PrincipalId | None = None

    def __post_init__(self) -> None:
        if len(self.forbidden_labels) < 2:
            raise ValueError("a combination rule needs at least two forbidden labels")

    def to_json(self) -> dict:
        return {
            "rule_id": self.rule_id,
            "applies_to": self.applies_to,
            "forbidden_labels": sorted(self.forbidden_labels),
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "DenyCombinationRule":
        return cls(
            rule_id=data["rule_id"],
            forbidden_labels=frozenset(data["forbidden_labels"]),
            applies_to=data.get("applies_to"),
        )


@dataclass(frozen=True)
class AggregationPolicy:
    rules: tuple[DenyCombinationRule, ...] = ()

    def __post_init__(self) -> None:
        ids = [r.rule_id for r in self.rules]
        if len(ids) != len(set(ids)):
            raise ValueError("aggregation rule ids must be unique")

    def to_json(self) -> dict:
        return {"rules": [r.to_json() for r in self.rules]}

    @classmethod
    def from_json(cls, data: Mapping) -> "AggregationPolicy":
        return cls(rules=tuple(DenyCombinationRule.from_json(r) for r in data.get("rules", ())))


EMPTY_POLICY = AggregationPolicy()


@dataclass(frozen=True)
class CombinationDecision:
    allowed: bool
    rule_id: str | None = None
    witness: tuple[tuple[str, ResourceId], ...] = ()

    def witness_map(self) -> dict[str, ResourceId]:
        return dict(self.witness)

    def to_json(self) -> dict:
        return {
            "allowed": self.allowed,
            "rule_id": self.rule_id,
            "witness": [[label, rid] for label, rid in self.witness],
        }


def check_labels(
    rules: Sequence[DenyCombinationRule],
    principal: PrincipalId,
    labels_by_resource: Mapping[ResourceId, frozenset[str]],
) -> CombinationDecision:
    """Rule evaluation over explicit resource labels.

    Deny iff some applicable rule has every forbidden label covered by at
    least one resource. Among firing rules the lowest rule_id wins, and the
    witness maps each forbidden label to the lexicographically smallest
    covering resource, so the decision is deterministic.
    """
    firing: list[DenyCombinationRule] = []
    for rule in rules:
        if rule.applies_to is not None and rule.applies_to != principal:
            continue
        covered = all(
            any(label in labels for labels in labels_by_resource.values())
            for label in rule.forbidden_labels
        )
        if covered:
            firing.append(rule)
    if not firing:
        return CombinationDecision(allowed=True)
    winner = min(firing, key=lambda r: r.rule_id)
    witness = tuple(
        (
            label,
            min(rid for rid, labels in labels_by_resource.items() if label in labels),
        )
        for label in sorted(winner.forbidden_labels)
    )
    return CombinationDecision(allowed=False, rule_id=winner.rule_id, witness=witness)


def check_combination(
    policy: AggregationPolicy,
    principal: PrincipalId,
    provenance: Iterable[ResourceId],
    catalog: Catalog,
) -> CombinationDecision:
    """Combination decision for delivering/holding an artifact with this provenance."""
    labels_by_resource: dict[ResourceId, frozenset[str]] = {}
    for rid in provenance:
        if not catalog.has_resource(rid):
            raise UnknownResource(f"unknown resource in provenance: {rid!r}")
        labels_by_resource[rid] = catalog.resource(rid).labels
    return check_labels(policy.rules, principal, labels_by_resource)


@dataclass(frozen=True)
class ContributionEntry:
    resource: ResourceId
    vertex_id: str
    tick: int

    def to_json(self) -> list:
        return [self.resource, self.vertex_id, self.tick]


def inspect_contributions(artifact, graph) -> tuple[ContributionEntry, ...]:
    """Which retrieval contributed each provenance element, and when.

    Entries are ordered by (tick, vertex_id). The artifact must have been
    produced by the given graph's execution.
    """
    if artifact.workflow_id != graph.workflow_id or not graph.has_vertex(artifact.produced_by):
        raise ForeignArtifact(
            f"artifact {artifact.artifact_id!r} was not produced by workflow "
            f"{graph.workflow_id!r}"
        )
    return tuple(sorted(artifact.contributions, key=lambda c: (c.tick, c.vertex_id)))
