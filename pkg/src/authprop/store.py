"""Time-versioned relationship-tuple store: the point-in-time authorization oracle.

Tuples carry half-open validity intervals [valid_from, valid_until). A
revocation at tick t sets valid_until = t, so the grant already denies at t:
revocation wins the boundary tick. Queries are pure functions of the tuple
set and the query tick, which is what makes embedded trace snapshots
re-checkable offline.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence, Union

from .errors import (
    AlreadyRevoked,
    ClockRegression,
    FutureTime,
    UnknownResource,
    UnknownSubject,
    UnknownTuple,
)
from .model import Action, Catalog, GroupId, PrincipalId, ResourceId, Scope

Tick = int

DEFAULT_DEPTH_LIMIT = 8


@dataclass(frozen=True)
class MemberOf:
    """subject is a member of group; subjects may themselves be groups."""

    group: GroupId

    def to_json(self) -> dict:
        return {"type": "member_of", "group": self.group}


@dataclass(frozen=True)
class DirectGrant:
    """subject (a principal) may perform action on resource."""

    action: Action
    resource: ResourceId

    def to_json(self) -> dict:
        return {"type": "grant", "action": self.action.value, "resource": self.resource}


@dataclass(frozen=True)
class GroupGrant:
    """every member of group may perform action on resource."""

    action: Action
    resource: ResourceId
    group: GroupId

    def to_json(self) -> dict:
        return {
            "type": "grant_to_group",
            "action": self.action.value,
            "resource": self.resource,
            "group": self.group,
        }


Relation = Union[MemberOf, DirectGrant, GroupGrant]


def relation_from_json(data: Mapping) -> Relation:
    kind = data["type"]
    if kind == "member_of":
        return MemberOf(group=data["group"])
    if kind == "grant":
        return DirectGrant(action=Action(data["action"]), resource=data["resource"])
    if kind == "grant_to_group":
        return GroupGrant(
            action=Action(data["action"]), resource=data["resource"], group=data["group"]
        )
    raise ValueError(f"unknown relation type: {kind!r}")


@dataclass(frozen=True)
class AuthorizationTuple:
    subject: str
    relation: Relation
    valid_from: Tick
    valid_until: Tick | None = None

    def __post_init__(self) -> None:
        if self.valid_from < 0:
            raise ValueError("valid_from must be a non-negative tick")
        if self.valid_until is not None and self.valid_until < self.valid_from:
            raise ValueError("valid_until must not precede valid_from")
        if isinstance(self.relation, GroupGrant) and self.subject != self.relation.group:
            raise ValueError("group grant tuples must use the group as subject")

    def valid_at(self, t: Tick) -> bool:
        return self.valid_from <= t and (self.valid_until is None or t < self.valid_until)

    def to_json(self) -> dict:
        return {
            "subject": self.subject,
            "relation": self.relation.to_json(),
            "valid_from": self.valid_from,
            "valid_until": self.valid_until,
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "AuthorizationTuple":
        return cls(
            subject=data["subject"],
            relation=relation_from_json(data["relation"]),
            valid_from=data["valid_from"],
            valid_until=data.get("valid_until"),
        )


def evaluate_tuples(
    tuples: Sequence[AuthorizationTuple],
    subject: str,
    action: Action,
    resource: ResourceId,
    t: Tick,
    depth_limit: int = DEFAULT_DEPTH_LIMIT,
) -> bool:
    """Pure authorization evaluation over an explicit tuple set.

    Allows iff the subject holds a direct grant valid at t, or a membership
    path of length <= depth_limit over MemberOf tuples valid at t reaches a
    group holding a matching group grant valid at t. Cycle safe.
    """
    for tup in tuples:
        if (
            tup.subject == subject
            and isinstance(tup.relation, DirectGrant)
            and tup.relation.action is action
            and tup.relation.resource == resource
            and tup.valid_at(t)
        ):
            return True
    granted_groups = {
        tup.relation.group
        for tup in tuples
        if isinstance(tup.relation, GroupGrant)
        and tup.relation.action is action
        and tup.relation.resource == resource
        and tup.valid_at(t)
    }
    if not granted_groups:
        return False
    frontier = {subject}
    seen = {subject}
    for _ in range(depth_limit):
        step = {
            tup.relation.group
            for tup in tuples
            if isinstance(tup.relation, MemberOf)
            and tup.subject in frontier
            and tup.valid_at(t)
        }
        step -= seen
        if step & granted_groups:
            return True
        if not step:
            return False
        seen |= step
        frontier = step
    return False


def membership_cone(
    tuples: Sequence[AuthorizationTuple],
    subject: str,
    t: Tick,
    depth_limit: int = DEFAULT_DEPTH_LIMIT,
) -> set[str]:
    """subject plus every group reachable over MemberOf tuples valid at t."""
    cone = {subject}
    frontier = {subject}
    for _ in range(depth_limit):
        step = {
            tup.relation.group
            for tup in tuples
            if isinstance(tup.relation, MemberOf)
            and tup.subject in frontier
            and tup.valid_at(t)
        }
        step -= cone
        if not step:
            break
        cone |= step
        frontier = step
    return cone


@dataclass(frozen=True)
class TupleSnapshot:
    """Immutable view of the tuples valid at one tick.

    check() over a snapshot gives the same answer as auth_check over the
    originating store at the snapshot tick; the snapshot is what decision
    records embed so audits never need the store.
    """

    at: Tick
    tuples: tuple[AuthorizationTuple, ...]
    depth_limit: int = DEFAULT_DEPTH_LIMIT

    def check(self, subject: str, action: Action, resource: ResourceId) -> bool:
        return evaluate_tuples(
            self.tuples, subject, action, resource, self.at, self.depth_limit
        )

    def to_json(self) -> dict:
        return {
            "at": self.at,
            "depth_limit": self.depth_limit,
            "tuples": [tup.to_json() for tup in self.tuples],
        }


class TupleStore:
    """Append-only tuple store with a monotone logical clock.

    The only mutation besides append is finalizing a tuple's valid_until,
    which is how revocation is represented. When built with a catalog, the
    store rejects queries over ids the catalog does not know; a store built
    without one answers on the tuple set alone.
    """

    def __init__(
        self,
        catalog: Catalog | None = None,
        depth_limit: int = DEFAULT_DEPTH_LIMIT,
    ) -> None:
        self.catalog = catalog
        self.depth_limit = depth_limit
        self.clock: Tick = 0
        self._tuples: list[AuthorizationTuple] = []

    def __len__(self) -> int:
        return len(self._tuples)

    @property
    def tuples(self) -> tuple[AuthorizationTuple, ...]:
        return tuple(self._tuples)

    def get(self, tuple_id: int) -> AuthorizationTuple:
        if not 0 <= tuple_id < len(self._tuples):
            raise UnknownTuple(f"no tuple with id {tuple_id}")
        return self._tuples[tuple_id]

    def advance_to(self, t: Tick) -> None:
        if t < self.clock:
            raise ClockRegression(f"clock may not move backwards: {self.clock} -> {t}")
        self.clock = t

    def add(self, tup: AuthorizationTuple) -> int:
        """Append a tuple and return its id. valid_from may not predate the clock."""
        if tup.valid_from < self.clock:
            raise ClockRegression(
                f"tuple valid_from {tup.valid_from} predates store clock {self.clock}"
            )
        self._tuples.append(tup)
        return len(self._tuples) - 1

    def revoke(self, tuple_id: int, t: Tick) -> None:
        """Finalize a tuple's validity so it no longer holds at tick t."""
        tup = self.get(tuple_id)
        if tup.valid_until is not None:
            raise AlreadyRevoked(f"tuple {tuple_id} already revoked at {tup.valid_until}")
        if t < tup.valid_from:
            raise ClockRegression(
                f"revocation at {t} precedes tuple valid_from {tup.valid_from}"
            )
        self._tuples[tuple_id] = replace(tup, valid_until=t)

    def _resolve(self, subject: str, resource: ResourceId) -> None:
        if self.catalog is None:
            return
        if not self.catalog.has_principal(subject):
            raise UnknownSubject(f"unknown principal: {subject!r}")
        if not self.catalog.has_resource(resource):
            raise UnknownResource(f"unknown resource: {resource!r}")

    def auth_check(
        self, subject: PrincipalId, action: Action, resource: ResourceId, t: Tick
    ) -> bool:
        """Point-in-time authorization decision. Pure: no state is touched."""
        self._resolve(subject, resource)
        return evaluate_tuples(self._tuples, subject, action, resource, t, self.depth_limit)

    def snapshot_at(self, t: Tick) -> TupleSnapshot:
        """All tuples valid at t, frozen. t may not exceed the store clock."""
        if t > self.clock:
            raise FutureTime(f"snapshot at {t} is ahead of store clock {self.clock}")
        return TupleSnapshot(
            at=t,
            tuples=tuple(tup for tup in self._tuples if tup.valid_at(t)),
            depth_limit=self.depth_limit,
        )

    def decision_slice(
        self,
        subjects: Iterable[str],
        resources: Iterable[ResourceId],
        t: Tick,
    ) -> tuple[AuthorizationTuple, ...]:
        """Minimal tuple set sufficient to re-derive auth checks offline.

        Covers, for each subject, its membership cone at t, direct grants it
        holds, and group grants reachable from the cone; grant tuples are
        kept only when they name one of the given resources.
        """
        subject_set = set(subjects)
        resource_set = set(resources)
        cones: set[str] = set()
        for s in subject_set:
            cones |= membership_cone(self._tuples, s, t, self.depth_limit)
        out: list[AuthorizationTuple] = []
        for tup in self._tuples:
            if not tup.valid_at(t):
                continue
            rel = tup.relation
            if isinstance(rel, MemberOf):
                if tup.subject in cones:
                    out.append(tup)
            elif isinstance(rel, DirectGrant):
                if tup.subject in subject_set and rel.resource in resource_set:
                    out.append(tup)
            elif isinstance(rel, GroupGrant):
                if rel.group in cones and rel.resource in resource_set:
                    out.append(tup)
        return tuple(out)

    def principal_slice(self, subject: str, t: Tick) -> tuple[AuthorizationTuple, ...]:
        """Every tuple contributing to any grant the subject can derive at t."""
        cone = membership_cone(self._tuples, subject, t, self.depth_limit)
        out: list[AuthorizationTuple] = []
        for tup in self._tuples:
            if not tup.valid_at(t):
                continue
            rel = tup.relation
            if isinstance(rel, MemberOf):
                if tup.subject in cone:
                    out.append(tup)
            elif isinstance(rel, DirectGrant):
                if tup.subject == subject:
                    out.append(tup)
            elif isinstance(rel, GroupGrant):
                if rel.group in cone:
                    out.append(tup)
        return tuple(out)

    def derived_scope(self, subject: PrincipalId, t: Tick) -> Scope:
        """Scope the subject can exercise at t, enumerated over the catalog."""
        if self.catalog is None:
            raise ValueError("derived_scope requires a catalog-backed store")
        grants = []
        for res in self.catalog.resources:
            for action in Action:
                if evaluate_tuples(
                    self._tuples, subject, action, res.id, t, self.depth_limit
                ):
                    grants.append((res.id, action))
        return Scope.of(*grants)
