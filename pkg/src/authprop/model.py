"""Domain vocabulary: principals, resources, actions, and the scope algebra.

A scope is an explicit, finite set of (resource, action) grants. Scopes are
ordered by set inclusion and meet under intersection; there are no wildcard
or pattern grants. Resource labels carry no authority by themselves, they
only feed combination rules in the aggregation module.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Iterable, Iterator, Mapping

from .errors import UnknownResource, UnknownSubject

PrincipalId = str
ResourceId = str
GroupId = str


class PrincipalKind(str, Enum):
    HUMAN = "human"
    AGENT = "agent"


class Action(str, Enum):
    READ = "read"
    WRITE = "write"


Grant = tuple[ResourceId, Action]


def _as_grant(pair: Iterable) -> Grant:
    resource, action = pair
    return (str(resource), Action(action))


@dataclass(frozen=True)
class Scope:
    """Finite set of (resource, action) grants with plain set semantics."""

    grants: frozenset[Grant] = frozenset()

    @classmethod
    def of(cls, *pairs: Iterable) -> "Scope":
        return cls(frozenset(_as_grant(p) for p in pairs))

    def issubset(self, other: "Scope") -> bool:
        return self.grants <= other.grants

    def intersect(self, other: "Scope") -> "Scope":
        return Scope(self.grants & other.grants)

    def __contains__(self, pair: Iterable) -> bool:
        return _as_grant(pair) in self.grants

    def __iter__(self) -> Iterator[Grant]:
        return iter(self.sorted_grants)

    def __len__(self) -> int:
        return len(self.grants)

    def __bool__(self) -> bool:
        return bool(self.grants)

    @property
    def sorted_grants(self) -> tuple[Grant, ...]:
        return tuple(sorted(self.grants, key=lambda g: (g[0], g[1].value)))

    def resources(self) -> frozenset[ResourceId]:
        return frozenset(r for r, _ in self.grants)

    def to_json(self) -> list[list[str]]:
        return [[r, a.value] for r, a in self.sorted_grants]

    @classmethod
    def from_json(cls, data: Iterable) -> "Scope":
        return cls.of(*data)


EMPTY_SCOPE = Scope()


def scope_subset(a: Scope, b: Scope) -> bool:
    """True iff every grant in a is also granted by b."""
    return a.issubset(b)


def scope_intersect(a: Scope, b: Scope) -> Scope:
    """Grants present in both a and b: the greatest lower bound."""
    return a.intersect(b)


def scope_meet(scopes: Iterable[Scope]) -> Scope:
    """Intersection of a non-empty sequence of scopes."""
    result: Scope | None = None
    for s in scopes:
        result = s if result is None else result.intersect(s)
    if result is None:
        raise ValueError("meet of an empty sequence of scopes")
    return result


@dataclass(frozen=True)
class Principal:
    id: PrincipalId
    kind: PrincipalKind
    base_scope: Scope = EMPTY_SCOPE
    attested: bool = False

    @property
    def is_agent(self) -> bool:
        return self.kind is PrincipalKind.AGENT

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind.value,
            "base_scope": self.base_scope.to_json(),
            "attested": self.attested,
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "Principal":
        return cls(
            id=data["id"],
            kind=PrincipalKind(data["kind"]),
            base_scope=Scope.from_json(data.get("base_scope", [])),
            attested=bool(data.get("attested", False)),
        )


@dataclass(frozen=True)
class Resource:
    id: ResourceId
    labels: frozenset[str] = frozenset()

    def to_json(self) -> dict:
        return {"id": self.id, "labels": sorted(self.labels)}

    @classmethod
    def from_json(cls, data: Mapping) -> "Resource":
        return cls(id=data["id"], labels=frozenset(data.get("labels", ())))


@dataclass(frozen=True)
class Violation:
    """A catalog consistency problem, reported as data."""

    code: str
    detail: str


@dataclass(frozen=True)
class Catalog:
    """The closed universe of principals and resources for one deployment.

    require_attestation turns on the delegation-time attestation gate for
    agent subjects. Group ids live in a separate namespace and exist only
    inside authorization tuples, so the catalog does not list them.
    """

    principals: tuple[Principal, ...] = ()
    resources: tuple[Resource, ...] = ()
    require_attestation: bool = False

    @cached_property
    def principals_by_id(self) -> Mapping[PrincipalId, Principal]:
        return {p.id: p for p in self.principals}

    @cached_property
    def resources_by_id(self) -> Mapping[ResourceId, Resource]:
        return {r.id: r for r in self.resources}

    def principal(self, pid: PrincipalId) -> Principal:
        try:
            return self.principals_by_id[pid]
        except KeyError:
            raise UnknownSubject(f"unknown principal: {pid!r}") from None

    def resource(self, rid: ResourceId) -> Resource:
        try:
            return self.resources_by_id[rid]
        except KeyError:
            raise UnknownResource(f"unknown resource: {rid!r}") from None

    def has_principal(self, pid: PrincipalId) -> bool:
        return pid in self.principals_by_id

    def has_resource(self, rid: ResourceId) -> bool:
        return rid in self.resources_by_id

    def to_json(self) -> dict:
        return {
            "require_attestation": self.require_attestation,
            "principals": [p.to_json() for p in sorted(self.principals, key=lambda p: p.id)],
            "resources": [r.to_json() for r in sorted(self.resources, key=lambda r: r.id)],
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "Catalog":
        return cls(
            principals=tuple(Principal.from_json(p) for p in data.get("principals", ())),
            resources=tuple(Resource.from_json(r) for r in data.get("resources", ())),
            require_attestation=bool(data.get("require_attestation", False)),
        )

    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def catalog_validate(catalog: Catalog) -> list[Violation]:
    """Consistency check over the catalog, returning violations as data.

    Flags duplicate ids (within and across the principal and resource
    namespaces), empty ids, and base-scope grants that name resources the
    catalog does not hold.
    """
    violations: list[Violation] = []
    seen: set[str] = set()
    for p in catalog.principals:
        if not p.id:
            violations.append(Violation("empty_id", "principal with empty id"))
        if p.id in seen:
            violations.append(Violation("duplicate_id", f"duplicate id: {p.id!r}"))
        seen.add(p.id)
    for r in catalog.resources:
        if not r.id:
            violations.append(Violation("empty_id", "resource with empty id"))
        if r.id in seen:
            violations.append(Violation("duplicate_id", f"duplicate id: {r.id!r}"))
        seen.add(r.id)
    for p in catalog.principals:
        for rid, action in p.base_scope.sorted_grants:
            if not catalog.has_resource(rid):
                violations.append(
                    Violation(
                        "dangling_resource",
                        f"base_scope of {p.id!r} grants {action.value} on unknown resource {rid!r}",
                    )
                )
    return violations
