"""Workflow graphs and the reference monitor that executes them.

Vertices run one per tick in topological order (ties broken by ascending
vertex_id). Every authorization decision is appended to the trace before its
effect takes place, and decision records embed the snapshot, token chain,
and derivation needed to recompute them offline. Denials fail closed: a
vertex that cannot prove authority produces nothing.

Temporal policy decides when retrieval authority is evaluated:

  initiation  against the state at workflow initiation (t0); later
              revocations are invisible by design, the stale-window risk is
              the documented cost of this mode
  access      against the state at the tick the access happens
  completion  admitted provisionally at access, re-evaluated for every
              contributing access at delivery time

Denied vertices under skip_and_mark_partial are excluded together with any
downstream vertex left without inputs, and every delivery then carries a
completeness disclosure naming the exclusions.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence, Union

from .aggregation import (
    AggregationPolicy,
    CombinationDecision,
    ContributionEntry,
    EMPTY_POLICY,
    check_combination,
    provenance_union,
)
from .delegation import (
    CoherenceState,
    DelegationToken,
    RevocationRegistry,
    ValiditySpec,
    check_validity,
    effective_authority,
    verify_chain,
)
from .errors import (
    InvalidGraph,
    TerminalExecution,
    UnboundToken,
)
from .model import Action, Catalog, Principal, PrincipalId, ResourceId, Scope
from .store import AuthorizationTuple, Tick, TupleStore
from .trace import TraceEvent, TraceHeader, WorkflowTrace


class VertexKind(str, Enum):
    RETRIEVE = "retrieve"
    TRANSFORM = "transform"
    SYNTHESIZE = "synthesize"
    RETURN = "return"


class TemporalPolicy(str, Enum):
    INITIATION_TIME = "initiation"
    ACCESS_TIME = "access"
    COMPLETION_TIME = "completion"


class OnDeny(str, Enum):
    FAIL_WORKFLOW = "fail_workflow"
    SKIP_AND_MARK_PARTIAL = "skip_and_mark_partial"


@dataclass(frozen=True)
class ActionVertex:
    vertex_id: str
    kind: VertexKind
    agent: PrincipalId
    token_ref: str
    resource: ResourceId | None = None
    recipient: PrincipalId | None = None

    def to_json(self) -> dict:
        out: dict = {
            "id": self.vertex_id,
            "kind": self.kind.value,
            "agent": self.agent,
            "token": self.token_ref,
        }
        if self.resource is not None:
            out["resource"] = self.resource
        if self.recipient is not None:
            out["recipient"] = self.recipient
        return out

    @classmethod
    def from_json(cls, data: Mapping) -> "ActionVertex":
        return cls(
            vertex_id=data["id"],
            kind=VertexKind(data["kind"]),
            agent=data["agent"],
            token_ref=data["token"],
            resource=data.get("resource"),
            recipient=data.get("recipient"),
        )


@dataclass(frozen=True)
class WorkflowGraph:
    workflow_id: str
    initiator: PrincipalId
    vertices: tuple[ActionVertex, ...]
    edges: tuple[tuple[str, str], ...]

    def has_vertex(self, vertex_id: str) -> bool:
        return any(v.vertex_id == vertex_id for v in self.vertices)

    def vertex(self, vertex_id: str) -> ActionVertex:
        for v in self.vertices:
            if v.vertex_id == vertex_id:
                return v
        raise KeyError(vertex_id)

    def predecessors(self, vertex_id: str) -> list[str]:
        return [a for a, b in self.edges if b == vertex_id]

    def successors(self, vertex_id: str) -> list[str]:
        return [b for a, b in self.edges if a == vertex_id]

    def to_json(self) -> dict:
        return {
            "initiator": self.initiator,
            "vertices": [v.to_json() for v in self.vertices],
            "edges": [[a, b] for a, b in self.edges],
        }


@dataclass(frozen=True)
class DagViolation:
    code: str
    detail: str


def validate_dag(graph: WorkflowGraph) -> list[DagViolation]:
    """Structural graph validation, violations as data.

    Checks id uniqueness, edge endpoint resolution, acyclicity, the
    vertex-kind edge rules (retrievals take no dataflow input, returns feed
    nothing), kind-specific required fields, and that at least one return
    vertex exists.
    """
    violations: list[DagViolation] = []
    ids = [v.vertex_id for v in graph.vertices]
    seen: set[str] = set()
    for vid in ids:
        if vid in seen:
            violations.append(DagViolation("duplicate_vertex_id", f"duplicate vertex id {vid!r}"))
        seen.add(vid)
    known = set(ids)
    for a, b in graph.edges:
        for endpoint in (a, b):
            if endpoint not in known:
                violations.append(
                    DagViolation("unknown_endpoint", f"edge endpoint {endpoint!r} is not a vertex")
                )
    for v in graph.vertices:
        if v.kind is VertexKind.RETRIEVE:
            if v.resource is None:
                violations.append(
                    DagViolation("missing_resource", f"retrieve vertex {v.vertex_id!r} names no resource")
                )
            if any(b == v.vertex_id for a, b in graph.edges if a in known):
                violations.append(
                    DagViolation(
                        "retrieve_has_input",
                        f"retrieve vertex {v.vertex_id!r} has an incoming dataflow edge",
                    )
                )
        if v.kind is VertexKind.RETURN:
            if v.recipient is None:
                violations.append(
                    DagViolation("missing_recipient", f"return vertex {v.vertex_id!r} names no recipient")
                )
            if any(a == v.vertex_id for a, b in graph.edges if b in known):
                violations.append(
                    DagViolation(
                        "return_has_output",
                        f"return vertex {v.vertex_id!r} has an outgoing dataflow edge",
                    )
                )
        if not v.agent:
            violations.append(DagViolation("missing_agent", f"vertex {v.vertex_id!r} has no agent"))
        if not v.token_ref:
            violations.append(DagViolation("missing_token", f"vertex {v.vertex_id!r} has no token"))
    if not any(v.kind is VertexKind.RETURN for v in graph.vertices):
        violations.append(DagViolation("no_return_vertex", "workflow delivers nothing"))
    # Kahn's algorithm; anything left over sits on a cycle.
    indeg = {vid: 0 for vid in known}
    for a, b in graph.edges:
        if a in known and b in known and a != b:
            indeg[b] += 1
    ready = [vid for vid, d in sorted(indeg.items()) if d == 0]
    heapq.heapify(ready)
    visited = 0
    indeg_work = dict(indeg)
    succs: dict[str, list[str]] = {vid: [] for vid in known}
    for a, b in graph.edges:
        if a in known and b in known:
            succs[a].append(b)
    while ready:
        vid = heapq.heappop(ready)
        visited += 1
        for nxt in succs[vid]:
            if nxt == vid:
                continue
            indeg_work[nxt] -= 1
            if indeg_work[nxt] == 0:
                heapq.heappush(ready, nxt)
    if visited != len(known) or any(a == b for a, b in graph.edges):
        violations.append(DagViolation("cycle", "dataflow edges contain a cycle"))
    return violations


def topological_order(graph: WorkflowGraph) -> list[str]:
    """Stable topological order with ties broken by ascending vertex_id."""
    indeg = {v.vertex_id: 0 for v in graph.vertices}
    for a, b in graph.edges:
        indeg[b] += 1
    ready = [vid for vid, d in indeg.items() if d == 0]
    heapq.heapify(ready)
    order: list[str] = []
    while ready:
        vid = heapq.heappop(ready)
        order.append(vid)
        for nxt in graph.successors(vid):
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                heapq.heappush(ready, nxt)
    if len(order) != len(graph.vertices):
        raise InvalidGraph("graph contains a cycle")
    return order


def reachable_from(graph: WorkflowGraph, start: str) -> set[str]:
    out: set[str] = set()
    frontier = [start]
    while frontier:
        vid = frontier.pop()
        for nxt in graph.successors(vid):
            if nxt not in out:
                out.add(nxt)
                frontier.append(nxt)
    return out


@dataclass(frozen=True)
class ExecutionConfig:
    temporal_policy: TemporalPolicy
    on_deny: OnDeny = OnDeny.FAIL_WORKFLOW


@dataclass(frozen=True)
class Disclosure:
    """Completeness statement attached to every delivered artifact."""

    complete: bool
    excluded_vertices: tuple[str, ...] = ()
    excluded_resources: tuple[str, ...] = ()
    note: str = ""

    def to_json(self) -> dict:
        return {
            "complete": self.complete,
            "excluded_vertices": list(self.excluded_vertices),
            "excluded_resources": list(self.excluded_resources),
            "note": self.note,
        }


@dataclass(frozen=True)
class DataArtifact:
    artifact_id: str
    workflow_id: str
    produced_by: str
    provenance: frozenset[ResourceId]
    contributions: tuple[ContributionEntry, ...]
    payload: str

    def to_json(self) -> dict:
        return {
            "artifact_id": self.artifact_id,
            "workflow_id": self.workflow_id,
            "produced_by": self.produced_by,
            "provenance": sorted(self.provenance),
            "contributions": [c.to_json() for c in self.contributions],
            "payload": self.payload,
        }


@dataclass(frozen=True)
class Delivery:
    recipient: PrincipalId
    artifact: DataArtifact
    disclosure: Disclosure


class ExecutionStatus(str, Enum):
    COMPLETED = "completed"
    COMPLETED_PARTIAL = "completed_partial"
    DENIED = "denied"


@dataclass(frozen=True)
class ExecutionResult:
    status: ExecutionStatus
    delivered: tuple[Delivery, ...] = ()
    excluded: frozenset[str] = frozenset()
    denied_at: str | None = None
    deny_reason: str | None = None


@dataclass(frozen=True)
class DeliveryDecision:
    allowed: bool
    eval_time: Tick
    read_failures: tuple[ResourceId, ...]
    aggregation: CombinationDecision


def holds_read(principal: Principal, resource: ResourceId, store: TupleStore, t: Tick) -> bool:
    return (resource, Action.READ) in principal.base_scope or store.auth_check(
        principal.id, Action.READ, resource, t
    )


def delivery_check(
    recipient: Principal,
    artifact: DataArtifact,
    store: TupleStore,
    policy: TemporalPolicy,
    clock: Tick,
    aggregation_policy: AggregationPolicy,
    catalog: Catalog,
    initiation_tick: Tick | None = None,
) -> DeliveryDecision:
    """Recipient-side delivery gate: read authority over the full provenance
    at the policy's evaluation time, plus the combination rules. An empty
    provenance passes the read check vacuously."""
    if policy is TemporalPolicy.INITIATION_TIME:
        if initiation_tick is None:
            raise ValueError("initiation-time delivery check needs the initiation tick")
        eval_time = initiation_tick
    else:
        eval_time = clock
    failures = tuple(
        rid
        for rid in sorted(artifact.provenance)
        if not holds_read(recipient, rid, store, eval_time)
    )
    agg = check_combination(aggregation_policy, recipient.id, artifact.provenance, catalog)
    return DeliveryDecision(
        allowed=not failures and agg.allowed,
        eval_time=eval_time,
        read_failures=failures,
        aggregation=agg,
    )


@dataclass(frozen=True)
class RevokeTupleEvent:
    tick: Tick
    tuple_id: int
    label: str = ""


@dataclass(frozen=True)
class RevokeTokenEvent:
    tick: Tick
    token_id: str


@dataclass(frozen=True)
class RevokePrincipalEvent:
    tick: Tick
    principal: PrincipalId


StoreEvent = Union[RevokeTupleEvent, RevokeTokenEvent, RevokePrincipalEvent]


@dataclass(frozen=True)
class _ProvisionalAccess:
    vertex_id: str
    resource: ResourceId
    agent: PrincipalId
    token: DelegationToken
    tick: Tick


@dataclass
class _EngineQuirks:
    """Deliberately unsafe engine behaviors for failure reproduction.

    Constructed only by the simulator's legacy mode; the library never
    builds one. widen_vertices admits accesses under a fabricated
    global-scope token when the vertex's binding fails instead of failing
    closed. substituted_tokens silently maps a broken token reference to a
    parent token, so work proceeds under authority that was never delegated.
    """

    widen_vertices: frozenset[str] = frozenset()
    substituted_tokens: dict[str, DelegationToken] = field(default_factory=dict)


class WorkflowExecution:
    """Stepwise reference-monitor execution of one workflow graph."""

    def __init__(
        self,
        graph: WorkflowGraph,
        config: ExecutionConfig,
        store: TupleStore,
        tokens: Mapping[str, DelegationToken],
        registry: RevocationRegistry,
        *,
        aggregation_policy: AggregationPolicy = EMPTY_POLICY,
        coherence: CoherenceState | None = None,
        events: Sequence[StoreEvent] = (),
        trace: WorkflowTrace | None = None,
        binding_failures: Iterable[str] = (),
        clock: Tick | None = None,
        _quirks: _EngineQuirks | None = None,
    ) -> None:
        if store.catalog is None:
            raise ValueError("workflow execution needs a catalog-backed store")
        if clock is not None:
            store.advance_to(clock)
        violations = validate_dag(graph)
        if violations:
            raise InvalidGraph(
                "graph failed validation: " + "; ".join(v.detail for v in violations),
                tuple(violations),
            )
        self.graph = graph
        self.config = config
        self.store = store
        self.catalog: Catalog = store.catalog
        self.registry = registry
        self.coherence = coherence if coherence is not None else CoherenceState()
        self.aggregation_policy = aggregation_policy
        self.tokens = dict(tokens)
        self.binding_failures = frozenset(binding_failures)
        self.quirks = _quirks
        self.t0: Tick = store.clock
        self._events = sorted(events, key=lambda e: e.tick)
        self._event_cursor = 0
        self._order = topological_order(graph)
        self._cursor = 0
        self._artifacts: dict[str, DataArtifact] = {}
        self._excluded: dict[str, str] = {}
        self._provisional: list[_ProvisionalAccess] = []
        self._deliveries: list[Delivery] = []
        self._denied: tuple[str, str] | None = None
        self._result: ExecutionResult | None = None
        self._verify_bindings()
        if trace is None:
            header = TraceHeader(
                workflow_id=graph.workflow_id,
                initiator=graph.initiator,
                temporal_policy=config.temporal_policy.value,
                catalog_digest=self.catalog.digest(),
                require_attestation=self.catalog.require_attestation,
                depth_limit=store.depth_limit,
            )
            trace = WorkflowTrace(header)
            trace.add(
                TraceEvent.INITIATED,
                self.t0,
                {
                    "workflow_id": graph.workflow_id,
                    "initiator": graph.initiator,
                    "temporal_policy": config.temporal_policy.value,
                    "on_deny": config.on_deny.value,
                    "t0": self.t0,
                    "catalog_digest": self.catalog.digest(),
                },
            )
        self.trace = trace

    # -- setup ------------------------------------------------------------

    def _verify_bindings(self) -> None:
        substituted = self.quirks.substituted_tokens if self.quirks else {}
        for v in self.graph.vertices:
            if v.vertex_id in self.binding_failures or (
                self.quirks and v.vertex_id in self.quirks.widen_vertices
            ):
                continue
            token = self.tokens.get(v.token_ref) or substituted.get(v.token_ref)
            if token is None:
                raise UnboundToken(f"vertex {v.vertex_id!r} references unknown token {v.token_ref!r}")
            if v.token_ref in substituted:
                continue  # legacy substitution skips the binding invariants
            if token.workflow_id != self.graph.workflow_id:
                raise UnboundToken(
                    f"token {token.token_id!r} is bound to workflow {token.workflow_id!r}"
                )
            if token.initiator != self.graph.initiator:
                raise UnboundToken(
                    f"token {token.token_id!r} was not rooted by initiator {self.graph.initiator!r}"
                )
            verdict = verify_chain(token, self.catalog)
            if not verdict.valid:
                raise UnboundToken(
                    f"token {token.token_id!r} fails chain verification: {verdict.violation}"
                )
            if token.current_subject != v.agent:
                raise UnboundToken(
                    f"token {token.token_id!r} is held by {token.current_subject!r}, "
                    f"not vertex agent {v.agent!r}"
                )
            if not self.catalog.has_principal(v.agent):
                raise UnboundToken(f"vertex {v.vertex_id!r} agent {v.agent!r} is not cataloged")

    # -- public driver ----------------------------------------------------

    @property
    def is_terminal(self) -> bool:
        return self._result is not None

    @property
    def result(self) -> ExecutionResult:
        if self._result is None:
            raise TerminalExecution("execution has not finished")
        return self._result

    def run(self) -> tuple[ExecutionResult, WorkflowTrace]:
        while not self.is_terminal:
            self.step()
        return self.result, self.trace

    def step(self) -> None:
        """Evaluate exactly one vertex (skipping input-starved ones)."""
        if self.is_terminal:
            raise TerminalExecution("execution already reached a terminal state")
        while self._cursor < len(self._order):
            vid = self._order[self._cursor]
            vertex = self.graph.vertex(vid)
            if vertex.kind is not VertexKind.RETRIEVE:
                preds = self.graph.predecessors(vid)
                if preds and not any(p in self._artifacts for p in preds):
                    self._excluded[vid] = "all inputs excluded"
                    self._cursor += 1
                    continue
            break
        if self._cursor >= len(self._order):
            self._finalize()
            return
        vid = self._order[self._cursor]
        vertex = self.graph.vertex(vid)
        tick = self.store.clock + 1
        self._apply_events_until(tick)
        self.store.advance_to(tick)
        if vertex.kind is VertexKind.RETRIEVE:
            self._eval_retrieve(vertex, tick)
        elif vertex.kind in (VertexKind.TRANSFORM, VertexKind.SYNTHESIZE):
            self._eval_combine(vertex, tick)
        else:
            self._eval_return(vertex, tick)
        self._cursor += 1
        if self._denied is not None or self._cursor >= len(self._order):
            # Sweep any trailing starved vertices into the excluded set.
            if self._denied is None:
                while self._cursor < len(self._order):
                    vid = self._order[self._cursor]
                    vertex = self.graph.vertex(vid)
                    preds = self.graph.predecessors(vid)
                    if vertex.kind is not VertexKind.RETRIEVE and preds and not any(
                        p in self._artifacts for p in preds
                    ):
                        self._excluded[vid] = "all inputs excluded"
                        self._cursor += 1
                        continue
                    break
                if self._cursor < len(self._order):
                    return
            self._finalize()

    # -- event scheduling ---------------------------------------------------

    def _apply_events_until(self, tick: Tick) -> None:
        # Revocations land at the boundary entering their tick, so an event
        # scheduled at t is already visible to the vertex evaluated at t.
        while self._event_cursor < len(self._events) and self._events[self._event_cursor].tick <= tick:
            event = self._events[self._event_cursor]
            self._event_cursor += 1
            if isinstance(event, RevokeTupleEvent):
                self.store.revoke(event.tuple_id, event.tick)
                payload = {
                    "kind": "revoke_tuple",
                    "target": event.label or str(event.tuple_id),
                    "at": event.tick,
                }
            elif isinstance(event, RevokeTokenEvent):
                self.registry.revoke_token(event.token_id, event.tick)
                payload = {"kind": "revoke_token", "target": event.token_id, "at": event.tick}
            else:
                self.registry.revoke_principal(event.principal, event.tick)
                payload = {"kind": "revoke_principal", "target": event.principal, "at": event.tick}
            self.trace.add(TraceEvent.REVOCATION_OBSERVED, event.tick, payload)

    # -- payload helpers ----------------------------------------------------

    def _principal_payload(self, *pids: PrincipalId) -> dict:
        out = {}
        for pid in pids:
            if self.catalog.has_principal(pid):
                out[pid] = self.catalog.principal(pid).to_json()
        return out

    def _access_slice(
        self, token: DelegationToken, subject: Principal, resource: ResourceId, eval_time: Tick
    ) -> list[dict]:
        resources = set(token.root.scope.resources()) | {resource}
        tuples = list(
            self.store.decision_slice({token.initiator, subject.id}, resources, eval_time)
        )
        if subject.kind.value == "human":
            for tup in self.store.principal_slice(subject.id, eval_time):
                if tup not in tuples:
                    tuples.append(tup)
        return [tup.to_json() for tup in tuples]

    def _labels_payload(self, provenance: Iterable[ResourceId]) -> dict:
        return {rid: sorted(self.catalog.resource(rid).labels) for rid in sorted(provenance)}

    # -- denial plumbing ----------------------------------------------------

    def _deny(self, vertex: ActionVertex, reason: str) -> None:
        if self.config.on_deny is OnDeny.FAIL_WORKFLOW:
            self._denied = (vertex.vertex_id, reason)
        else:
            self._excluded[vertex.vertex_id] = reason

    def _disclosure(self) -> Disclosure:
        excluded = tuple(sorted(self._excluded))
        resources = tuple(
            sorted(
                {
                    self.graph.vertex(vid).resource
                    for vid in excluded
                    if self.graph.vertex(vid).kind is VertexKind.RETRIEVE
                    and self.graph.vertex(vid).resource is not None
                }
            )
        )
        if not excluded:
            return Disclosure(complete=True, note="all requested sources included")
        return Disclosure(
            complete=False,
            excluded_vertices=excluded,
            excluded_resources=resources,
            note=f"partial result: {len(excluded)} vertex(es) excluded after authorization denials",
        )

    # -- vertex evaluation ----------------------------------------------------

    def _produce(
        self,
        vertex: ActionVertex,
        tick: Tick,
        provenance: frozenset[ResourceId],
        contributions: tuple[ContributionEntry, ...],
        inputs: Sequence[DataArtifact],
    ) -> None:
        artifact = DataArtifact(
            artifact_id=f"art-{vertex.vertex_id}",
            workflow_id=self.graph.workflow_id,
            produced_by=vertex.vertex_id,
            provenance=provenance,
            contributions=contributions,
            payload=f"output:{vertex.vertex_id}",
        )
        self.trace.add(
            TraceEvent.ARTIFACT_PRODUCED,
            tick,
            {
                "vertex_id": vertex.vertex_id,
                "artifact_id": artifact.artifact_id,
                "input_artifacts": sorted(a.artifact_id for a in inputs),
                "provenance": sorted(provenance),
                "contributions": [c.to_json() for c in contributions],
            },
        )
        self._artifacts[vertex.vertex_id] = artifact

    def _record_validity(
        self, vertex: ActionVertex, tick: Tick, token: DelegationToken, holder: PrincipalId
    ):
        entry = self.coherence.entry(token.token_id, holder)
        pre = entry.to_json()
        result = check_validity(token, holder, tick, self.registry, self.coherence)
        self.trace.add(
            TraceEvent.VALIDITY_CHECKED,
            tick,
            {
                "vertex_id": vertex.vertex_id,
                "token_id": token.token_id,
                "holder": holder,
                "mode": token.current_validity.to_json(),
                "chain_principals": sorted(token.principals),
                "pre": pre,
                "registry": self.registry.slice_for(token, tick),
                "decision": result.to_json(),
            },
        )
        return result

    def _record_access(
        self,
        vertex: ActionVertex,
        tick: Tick,
        decision: str,
        *,
        token: DelegationToken | None,
        eval_time: Tick | None,
        derivation: dict | None,
        snapshot: list[dict] | None,
        reason: str | None = None,
    ) -> None:
        payload: dict = {
            "vertex_id": vertex.vertex_id,
            "agent": vertex.agent,
            "resource": vertex.resource,
            "action": Action.READ.value,
            "policy": self.config.temporal_policy.value,
            "eval_time": eval_time,
            "decision": decision,
            "reason": reason,
            "token": token.to_json() if token is not None else None,
            "principals": self._principal_payload(
                vertex.agent, *(token.principals if token is not None else ())
            ),
            "snapshot": snapshot if snapshot is not None else [],
            "derivation": derivation,
        }
        self.trace.add(TraceEvent.ACCESS_DECIDED, tick, payload)

    def _eval_retrieve(self, vertex: ActionVertex, tick: Tick) -> None:
        assert vertex.resource is not None
        binding_failed = vertex.vertex_id in self.binding_failures or (
            self.quirks is not None and vertex.vertex_id in self.quirks.widen_vertices
        )
        if binding_failed:
            if self.quirks is not None and vertex.vertex_id in self.quirks.widen_vertices:
                self._eval_retrieve_widened(vertex, tick)
                return
            # Fail closed: a vertex that cannot prove its binding gets nothing.
            self.trace.add(
                TraceEvent.POLICY_VIOLATION,
                tick,
                {
                    "vertex_id": vertex.vertex_id,
                    "kind": "token_binding_failure",
                    "detail": "token binding could not be established; failing closed",
                },
            )
            self._record_access(
                vertex,
                tick,
                "deny",
                token=None,
                eval_time=None,
                derivation=None,
                snapshot=None,
                reason="token_binding_failure",
            )
            self._deny(vertex, "token binding failure")
            return
        token = self.tokens.get(vertex.token_ref)
        substituted = False
        if token is None and self.quirks is not None:
            token = self.quirks.substituted_tokens.get(vertex.token_ref)
            substituted = token is not None
        if token is None:
            raise UnboundToken(f"vertex {vertex.vertex_id!r} has no token")
        holder = token.current_subject if substituted else vertex.agent
        validity = self._record_validity(vertex, tick, token, holder)
        if not validity.valid:
            self._record_access(
                vertex,
                tick,
                "deny",
                token=token,
                eval_time=tick,
                derivation=None,
                snapshot=None,
                reason="token_revoked",
            )
            self._deny(vertex, "token revoked")
            return
        subject = self.catalog.principal(holder)
        if self.config.temporal_policy is TemporalPolicy.COMPLETION_TIME:
            snapshot = self._access_slice(token, subject, vertex.resource, tick)
            self._record_access(
                vertex,
                tick,
                "provisional",
                token=token,
                eval_time=None,
                derivation=None,
                snapshot=snapshot,
                reason="deferred to delivery re-evaluation",
            )
            self._provisional.append(
                _ProvisionalAccess(vertex.vertex_id, vertex.resource, holder, token, tick)
            )
            self._produce(
                vertex,
                tick,
                frozenset({vertex.resource}),
                (ContributionEntry(vertex.resource, vertex.vertex_id, tick),),
                (),
            )
            return
        eval_time = (
            self.t0
            if self.config.temporal_policy is TemporalPolicy.INITIATION_TIME
            else tick
        )
        ea = effective_authority(token, tick, self.store, self.catalog, eval_time)
        allowed = (vertex.resource, Action.READ) in ea.scope
        snapshot = self._access_slice(token, subject, vertex.resource, eval_time)
        self._record_access(
            vertex,
            tick,
            "allow" if allowed else "deny",
            token=token,
            eval_time=eval_time,
            derivation=ea.to_json(),
            snapshot=snapshot,
            reason=None if allowed else f"effective authority excludes read:{vertex.resource}",
        )
        if allowed:
            self._produce(
                vertex,
                tick,
                frozenset({vertex.resource}),
                (ContributionEntry(vertex.resource, vertex.vertex_id, tick),),
                (),
            )
        else:
            self._deny(vertex, f"access denied for {vertex.resource}")

    def _eval_retrieve_widened(self, vertex: ActionVertex, tick: Tick) -> None:
        # Legacy fallback bug: on binding failure, fabricate a token over the
        # whole catalog and admit on raw token scope without the authority meet.
        assert vertex.resource is not None
        from .delegation import AttenuationBlock

        scope = Scope.of(
            *(
                (res.id, action)
                for res in sorted(self.catalog.resources, key=lambda r: r.id)
                for action in (Action.READ, Action.WRITE)
            )
        )
        block = AttenuationBlock(
            seq=0,
            issuer=vertex.agent,
            subject=vertex.agent,
            scope=scope,
            validity=ValiditySpec.workflow_lifetime(),
            issued_at=tick,
        )
        token = DelegationToken(
            token_id=f"tok-global-{vertex.vertex_id}",
            workflow_id=self.graph.workflow_id,
            blocks=(block,),
        )
        validity = self._record_validity(vertex, tick, token, vertex.agent)
        allowed = validity.valid and (vertex.resource, Action.READ) in token.blocks[-1].scope
        raw = token.blocks[-1].scope.to_json()
        subject = self.catalog.principal(vertex.agent)
        snapshot = self._access_slice(token, subject, vertex.resource, tick)
        self._record_access(
            vertex,
            tick,
            "allow" if allowed else "deny",
            token=token,
            eval_time=tick,
            derivation={
                "scope": raw,
                "initiator_scope": raw,
                "chain_meet": raw,
                "subject_scope": raw,
                "evaluated_at": tick,
                "at_tick": tick,
            },
            snapshot=snapshot,
            reason="binding failure fallback to global scope",
        )
        if allowed:
            self._produce(
                vertex,
                tick,
                frozenset({vertex.resource}),
                (ContributionEntry(vertex.resource, vertex.vertex_id, tick),),
                (),
            )
        else:
            self._deny(vertex, "fallback token did not cover the resource")

    def _eval_combine(self, vertex: ActionVertex, tick: Tick) -> None:
        preds = [p for p in self._order if p in self.graph.predecessors(vertex.vertex_id)]
        inputs = [self._artifacts[p] for p in preds if p in self._artifacts]
        provenance = provenance_union(a.provenance for a in inputs)
        contributions = tuple(
            sorted(
                {c for a in inputs for c in a.contributions},
                key=lambda c: (c.tick, c.vertex_id, c.resource),
            )
        )
        if vertex.kind is VertexKind.SYNTHESIZE:
            recipients = sorted(
                {
                    self.graph.vertex(vid).recipient
                    for vid in reachable_from(self.graph, vertex.vertex_id)
                    if self.graph.vertex(vid).kind is VertexKind.RETURN
                    and self.graph.vertex(vid).recipient is not None
                }
            )
            checks = []
            failed: tuple[str, str] | None = None
            for role, principal in [("agent", vertex.agent)] + [
                ("recipient", r) for r in recipients
            ]:
                decision = check_combination(
                    self.aggregation_policy, principal, provenance, self.catalog
                )
                checks.append(
                    {"role": role, "principal": principal, **decision.to_json()}
                )
                if not decision.allowed and failed is None:
                    failed = (role, principal)
            allowed = failed is None
            self.trace.add(
                TraceEvent.SYNTHESIS_DECIDED,
                tick,
                {
                    "vertex_id": vertex.vertex_id,
                    "agent": vertex.agent,
                    "recipients": recipients,
                    "provenance": sorted(provenance),
                    "labels": self._labels_payload(provenance),
                    "rules": self.aggregation_policy.to_json()["rules"],
                    "checks": checks,
                    "decision": "allow" if allowed else "deny",
                    "failed_operand": None
                    if failed is None
                    else {"role": failed[0], "principal": failed[1]},
                },
            )
            if not allowed:
                assert failed is not None
                self._deny(
                    vertex,
                    f"combination denied for {failed[0]} {failed[1]}",
                )
                return
        self._produce(vertex, tick, provenance, contributions, inputs)

    def _eval_return(self, vertex: ActionVertex, tick: Tick) -> None:
        assert vertex.recipient is not None
        recipient = self.catalog.principal(vertex.recipient)
        preds = [p for p in self._order if p in self.graph.predecessors(vertex.vertex_id)]
        inputs = [self._artifacts[p] for p in preds if p in self._artifacts]
        for artifact in inputs:
            decision = delivery_check(
                recipient,
                artifact,
                self.store,
                self.config.temporal_policy,
                tick,
                self.aggregation_policy,
                self.catalog,
                initiation_tick=self.t0,
            )
            reevals = []
            reevals_ok = True
            if self.config.temporal_policy is TemporalPolicy.COMPLETION_TIME:
                lineage = {(c.vertex_id, c.resource) for c in artifact.contributions}
                for pa in self._provisional:
                    if (pa.vertex_id, pa.resource) not in lineage:
                        continue
                    ea = effective_authority(pa.token, tick, self.store, self.catalog, tick)
                    ok = (pa.resource, Action.READ) in ea.scope
                    reevals_ok = reevals_ok and ok
                    subject = self.catalog.principal(pa.agent)
                    reevals.append(
                        {
                            "vertex_id": pa.vertex_id,
                            "resource": pa.resource,
                            "agent": pa.agent,
                            "allowed": ok,
                            "token": pa.token.to_json(),
                            "principals": self._principal_payload(pa.agent, *pa.token.principals),
                            "derivation": ea.to_json(),
                            "snapshot": self._access_slice(pa.token, subject, pa.resource, tick),
                        }
                    )
            allowed = decision.allowed and reevals_ok
            if not decision.allowed:
                if decision.read_failures:
                    reason = "recipient lacks read authority: " + ", ".join(decision.read_failures)
                else:
                    reason = f"combination denied by rule {decision.aggregation.rule_id}"
            elif not reevals_ok:
                bad = [r["resource"] for r in reevals if not r["allowed"]]
                reason = "provisional access no longer authorized: " + ", ".join(sorted(bad))
            else:
                reason = None
            slice_json = [
                tup.to_json()
                for tup in self.store.decision_slice(
                    {recipient.id}, artifact.provenance, decision.eval_time
                )
            ]
            self.trace.add(
                TraceEvent.DELIVERY_DECIDED,
                tick,
                {
                    "vertex_id": vertex.vertex_id,
                    "recipient": recipient.id,
                    "artifact_id": artifact.artifact_id,
                    "provenance": sorted(artifact.provenance),
                    "policy": self.config.temporal_policy.value,
                    "eval_time": decision.eval_time,
                    "read_failures": list(decision.read_failures),
                    "aggregation": {
                        "labels": self._labels_payload(artifact.provenance),
                        "rules": self.aggregation_policy.to_json()["rules"],
                        "check": decision.aggregation.to_json(),
                    },
                    "principals": self._principal_payload(recipient.id),
                    "snapshot": slice_json,
                    "reevaluations": reevals,
                    "decision": "allow" if allowed else "deny",
                    "reason": reason,
                },
            )
            if allowed:
                disclosure = self._disclosure()
                self.trace.add(
                    TraceEvent.DELIVERED,
                    tick,
                    {
                        "vertex_id": vertex.vertex_id,
                        "recipient": recipient.id,
                        "artifact_id": artifact.artifact_id,
                        "provenance": sorted(artifact.provenance),
                        "disclosure": disclosure.to_json(),
                    },
                )
                self._deliveries.append(Delivery(recipient.id, artifact, disclosure))
            else:
                self._deny(vertex, reason or "delivery denied")
                if self._denied is not None:
                    return

    # -- finalization -----------------------------------------------------

    def _finalize(self) -> None:
        if self._denied is not None:
            vid, reason = self._denied
            self._result = ExecutionResult(
                status=ExecutionStatus.DENIED,
                delivered=tuple(self._deliveries),
                excluded=frozenset(self._excluded),
                denied_at=vid,
                deny_reason=reason,
            )
            return
        if self._excluded:
            self._result = ExecutionResult(
                status=ExecutionStatus.COMPLETED_PARTIAL,
                delivered=tuple(self._deliveries),
                excluded=frozenset(self._excluded),
            )
            return
        self._result = ExecutionResult(
            status=ExecutionStatus.COMPLETED, delivered=tuple(self._deliveries)
        )


def execute(
    graph: WorkflowGraph,
    config: ExecutionConfig,
    store: TupleStore,
    tokens: Mapping[str, DelegationToken],
    registry: RevocationRegistry,
    *,
    aggregation_policy: AggregationPolicy = EMPTY_POLICY,
    coherence: CoherenceState | None = None,
    events: Sequence[StoreEvent] = (),
    trace: WorkflowTrace | None = None,
    binding_failures: Iterable[str] = (),
    clock: Tick | None = None,
) -> tuple[ExecutionResult, WorkflowTrace]:
    """Run a workflow to termination and return (result, trace)."""
    execution = WorkflowExecution(
        graph,
        config,
        store,
        tokens,
        registry,
        aggregation_policy=aggregation_policy,
        coherence=coherence,
        events=events,
        trace=trace,
        binding_failures=binding_failures,
        clock=clock,
    )
    return execution.run()
