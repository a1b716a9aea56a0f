"""Offline trace auditing and provenance taint analysis.

The auditor works from trace bytes alone: decision records embed the token
chains, principal records, and tuple-store slices they were decided against,
so every decision can be recomputed without the live store. The audit
produces four sub-verdicts:

  access       access and validity decisions match recomputation
  chain        embedded token chains verify and bind issuer/holder correctly
  aggregation  synthesis combination decisions match the recorded rules
  delivery     recipient gating, re-evaluations, and disclosures hold up

A trace that fails hash-chain integrity is reported as such and its content
is not trusted enough to audit further.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .aggregation import DenyCombinationRule, check_labels
from .delegation import (
    DelegationToken,
    ValidityMode,
    ValiditySpec,
    verify_chain_with,
)
from .errors import BrokenTrace, ForeignArtifact, NotAnAccessRecord
from .model import Action, Grant, Principal, PrincipalKind, Scope
from .store import AuthorizationTuple, evaluate_tuples
from .trace import TraceEvent, TraceHeader, TraceRecord, WorkflowTrace, verify_integrity


@dataclass(frozen=True)
class AuditViolation:
    code: str
    seq: int
    detail: str

    def to_json(self) -> dict:
        return {"code": self.code, "seq": self.seq, "detail": self.detail}


@dataclass(frozen=True)
class SubVerdict:
    name: str
    records_checked: int
    violations: tuple[AuditViolation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "ok": self.ok,
            "records_checked": self.records_checked,
            "violations": [v.to_json() for v in self.violations],
        }


@dataclass(frozen=True)
class AuditVerdict:
    access: SubVerdict
    chain: SubVerdict
    aggregation: SubVerdict
    delivery: SubVerdict

    @property
    def ok(self) -> bool:
        return self.access.ok and self.chain.ok and self.aggregation.ok and self.delivery.ok

    def all_violations(self) -> tuple[AuditViolation, ...]:
        return (
            self.access.violations
            + self.chain.violations
            + self.aggregation.violations
            + self.delivery.violations
        )

    def to_json(self) -> dict:
        return {
            "ok": self.ok,
            "sub_verdicts": [
                self.access.to_json(),
                self.chain.to_json(),
                self.aggregation.to_json(),
                self.delivery.to_json(),
            ],
        }


def _parse_principals(data: Mapping) -> dict[str, Principal]:
    return {pid: Principal.from_json(rec) for pid, rec in data.items()}


def _parse_snapshot(data: Sequence) -> tuple[AuthorizationTuple, ...]:
    return tuple(AuthorizationTuple.from_json(t) for t in data)


def _recompute_validity(payload: Mapping, tick: int) -> dict:
    """Replay one validity decision from its embedded pre-state and
    registry slice."""
    spec = ValiditySpec.from_json(payload["mode"])
    pre = payload["pre"]
    targets = {payload["token_id"]} | set(payload["chain_principals"])
    fresh = not any(
        e["target"] in targets and e["at"] <= tick for e in payload["registry"]
    )
    cached_valid = pre["cached_valid"]

    def consulted() -> dict:
        return {"valid": fresh, "stale_cache_used": False, "consulted": True}

    def cached() -> dict:
        return {
            "valid": cached_valid,
            "stale_cache_used": cached_valid != fresh,
            "consulted": False,
        }

    if spec.mode is ValidityMode.WORKFLOW_LIFETIME or cached_valid is None:
        return consulted()
    if spec.mode is ValidityMode.EXEC_COUNT:
        assert spec.count is not None
        if pre["ops_since_check"] + 1 >= spec.count:
            return consulted()
        return cached()
    assert spec.ttl is not None
    if pre["last_check_at"] is None or tick - pre["last_check_at"] >= spec.ttl:
        return consulted()
    return cached()


def _effective_scope_from_slice(
    token: DelegationToken,
    principals: Mapping[str, Principal],
    snapshot: Sequence[AuthorizationTuple],
    eval_time: int,
    depth_limit: int,
) -> Scope | None:
    """Recompute the authority meet for grants in the root scope, using only
    the embedded tuple slice. Returns None when the subject's principal
    record is missing (reported separately)."""
    subject = principals.get(token.current_subject)
    if subject is None:
        return None
    chain = token.chain_meet()
    grants: set[Grant] = set()
    for grant in token.root.scope:
        rid, action = grant
        if grant not in chain:
            continue
        if not evaluate_tuples(snapshot, token.initiator, action, rid, eval_time, depth_limit):
            continue
        in_subject = grant in subject.base_scope
        if not in_subject and subject.kind is PrincipalKind.HUMAN:
            in_subject = evaluate_tuples(snapshot, subject.id, action, rid, eval_time, depth_limit)
        if in_subject:
            grants.add(grant)
    return Scope(frozenset(grants))


def recompute_access_record(header: TraceHeader, record: TraceRecord) -> dict:
    """Recompute one access decision from its own embedded context.

    Returns {"decision": "allow"|"deny", "scope": Scope} for records that
    carry a derivation; raises NotAnAccessRecord for anything else.
    """
    if record.event is not TraceEvent.ACCESS_DECIDED:
        raise NotAnAccessRecord(f"record {record.seq} is {record.event.value}")
    payload = record.payload
    if payload.get("token") is None or payload.get("derivation") is None:
        raise NotAnAccessRecord(
            f"record {record.seq} carries no derivation (decision: {payload.get('decision')})"
        )
    token = DelegationToken.from_json(payload["token"])
    principals = _parse_principals(payload.get("principals", {}))
    snapshot = _parse_snapshot(payload.get("snapshot", ()))
    scope = _effective_scope_from_slice(
        token, principals, snapshot, payload["eval_time"], header.depth_limit
    )
    if scope is None:
        raise NotAnAccessRecord(f"record {record.seq} lacks the subject's principal record")
    allowed = (payload["resource"], Action(payload["action"])) in scope
    return {"decision": "allow" if allowed else "deny", "scope": scope}


class _Auditor:
    def __init__(self, trace: WorkflowTrace) -> None:
        self.trace = trace
        self.header = trace.header
        self.access: list[AuditViolation] = []
        self.chain: list[AuditViolation] = []
        self.aggregation: list[AuditViolation] = []
        self.delivery: list[AuditViolation] = []
        self.counts = {"access": 0, "chain": 0, "aggregation": 0, "delivery": 0}
        self._deny_seen = False
        self._allowed_deliveries: set[tuple[str, str]] = set()

    # -- chain-level checks on any embedded token --------------------------

    def _check_token_binding(
        self,
        seq: int,
        token: DelegationToken,
        acting_agent: str | None,
        principals: Mapping[str, Principal],
    ) -> None:
        self.counts["chain"] += 1
        verdict = verify_chain_with(
            token,
            lambda pid: principals.get(pid),
            self.header.require_attestation,
            known_resource=lambda rid: True,
        )
        if not verdict.valid:
            self.chain.append(
                AuditViolation(
                    "chain_invalid",
                    seq,
                    f"token {token.token_id}: {verdict.violation} at block {verdict.at_seq}",
                )
            )
        if token.workflow_id != self.header.workflow_id:
            self.chain.append(
                AuditViolation(
                    "foreign_workflow_token",
                    seq,
                    f"token {token.token_id} belongs to workflow {token.workflow_id!r}",
                )
            )
        if token.initiator != self.header.initiator:
            self.chain.append(
                AuditViolation(
                    "root_not_initiator",
                    seq,
                    f"token {token.token_id} was rooted by {token.initiator!r}, "
                    f"not the workflow initiator {self.header.initiator!r}",
                )
            )
        if acting_agent is not None and acting_agent != token.current_subject:
            self.chain.append(
                AuditViolation(
                    "holder_mismatch",
                    seq,
                    f"agent {acting_agent!r} acted under token {token.token_id} "
                    f"delegated to {token.current_subject!r}",
                )
            )

    # -- per-record checks --------------------------------------------------

    def _check_validity_record(self, record: TraceRecord) -> None:
        self.counts["access"] += 1
        expected = _recompute_validity(record.payload, record.tick)
        claimed = record.payload["decision"]
        if claimed != expected:
            self.access.append(
                AuditViolation(
                    "validity_mismatch",
                    record.seq,
                    f"recorded {claimed}, recomputed {expected}",
                )
            )

    def _check_access_record(self, record: TraceRecord) -> None:
        payload = record.payload
        self.counts["access"] += 1
        decision = payload["decision"]
        if decision in ("deny", "provisional") and payload.get("derivation") is None:
            # Fail-closed denials and provisional admissions carry no
            # derivation; nothing to recompute at this record.
            if payload.get("token") is not None:
                token = DelegationToken.from_json(payload["token"])
                principals = _parse_principals(payload.get("principals", {}))
                self._check_token_binding(record.seq, token, payload["agent"], principals)
            if decision == "deny":
                self._deny_seen = True
            return
        if payload.get("token") is None:
            self.access.append(
                AuditViolation(
                    "missing_token",
                    record.seq,
                    f"decision {decision!r} recorded without a token chain",
                )
            )
            return
        token = DelegationToken.from_json(payload["token"])
        principals = _parse_principals(payload.get("principals", {}))
        snapshot = _parse_snapshot(payload.get("snapshot", ()))
        self._check_token_binding(record.seq, token, payload["agent"], principals)
        scope = _effective_scope_from_slice(
            token, principals, snapshot, payload["eval_time"], self.header.depth_limit
        )
        if scope is None:
            self.access.append(
                AuditViolation(
                    "missing_principal_record",
                    record.seq,
                    f"no principal record for subject {token.current_subject!r}",
                )
            )
            return
        claimed_scope = Scope.from_json(payload["derivation"]["scope"])
        if claimed_scope != scope:
            self.access.append(
                AuditViolation(
                    "derivation_mismatch",
                    record.seq,
                    f"recorded effective scope {claimed_scope.to_json()} != "
                    f"recomputed {scope.to_json()}",
                )
            )
        allowed = (payload["resource"], Action(payload["action"])) in scope
        if (decision == "allow") != allowed:
            self.access.append(
                AuditViolation(
                    "access_decision_mismatch",
                    record.seq,
                    f"recorded {decision!r} but recomputation says "
                    f"{'allow' if allowed else 'deny'} for "
                    f"{payload['action']}:{payload['resource']}",
                )
            )
        if decision == "deny":
            self._deny_seen = True

    def _check_synthesis_record(self, record: TraceRecord) -> None:
        payload = record.payload
        self.counts["aggregation"] += 1
        labels = {rid: frozenset(lbls) for rid, lbls in payload["labels"].items()}
        rules = [DenyCombinationRule.from_json(r) for r in payload["rules"]]
        all_ok = True
        for chk in payload["checks"]:
            expected = check_labels(rules, chk["principal"], labels)
            all_ok = all_ok and expected.allowed
            if expected.allowed != chk["allowed"] or expected.rule_id != chk.get("rule_id"):
                self.aggregation.append(
                    AuditViolation(
                        "combination_mismatch",
                        record.seq,
                        f"{chk['role']} {chk['principal']}: recorded allowed="
                        f"{chk['allowed']} rule={chk.get('rule_id')}, recomputed "
                        f"allowed={expected.allowed} rule={expected.rule_id}",
                    )
                )
        claimed = payload["decision"] == "allow"
        if claimed != all_ok:
            self.aggregation.append(
                AuditViolation(
                    "synthesis_decision_mismatch",
                    record.seq,
                    f"recorded {payload['decision']!r} but recomputed checks say "
                    f"{'allow' if all_ok else 'deny'}",
                )
            )
        if not claimed:
            self._deny_seen = True

    def _check_delivery_record(self, record: TraceRecord) -> None:
        payload = record.payload
        self.counts["delivery"] += 1
        principals = _parse_principals(payload.get("principals", {}))
        recipient = principals.get(payload["recipient"])
        snapshot = _parse_snapshot(payload.get("snapshot", ()))
        eval_time = payload["eval_time"]
        if recipient is None:
            self.delivery.append(
                AuditViolation(
                    "missing_principal_record",
                    record.seq,
                    f"no principal record for recipient {payload['recipient']!r}",
                )
            )
            return
        failures = [
            rid
            for rid in payload["provenance"]
            if not (
                (rid, Action.READ) in recipient.base_scope
                or evaluate_tuples(
                    snapshot, recipient.id, Action.READ, rid, eval_time, self.header.depth_limit
                )
            )
        ]
        if failures != list(payload["read_failures"]):
            self.delivery.append(
                AuditViolation(
                    "recipient_read_mismatch",
                    record.seq,
                    f"recorded read failures {payload['read_failures']}, "
                    f"recomputed {failures}",
                )
            )
        agg = payload["aggregation"]
        labels = {rid: frozenset(lbls) for rid, lbls in agg["labels"].items()}
        rules = [DenyCombinationRule.from_json(r) for r in agg["rules"]]
        expected_agg = check_labels(rules, recipient.id, labels)
        claimed_agg = agg["check"]
        self.counts["aggregation"] += 1
        if expected_agg.allowed != claimed_agg["allowed"] or expected_agg.rule_id != claimed_agg.get(
            "rule_id"
        ):
            self.aggregation.append(
                AuditViolation(
                    "combination_mismatch",
                    record.seq,
                    f"delivery aggregation check for {recipient.id}: recorded "
                    f"allowed={claimed_agg['allowed']} rule={claimed_agg.get('rule_id')}, "
                    f"recomputed allowed={expected_agg.allowed} rule={expected_agg.rule_id}",
                )
            )
        reevals_ok = True
        for entry in payload.get("reevaluations", ()):
            token = DelegationToken.from_json(entry["token"])
            entry_principals = _parse_principals(entry.get("principals", {}))
            entry_snapshot = _parse_snapshot(entry.get("snapshot", ()))
            self._check_token_binding(record.seq, token, entry["agent"], entry_principals)
            scope = _effective_scope_from_slice(
                token, entry_principals, entry_snapshot, record.tick, self.header.depth_limit
            )
            if scope is None:
                self.delivery.append(
                    AuditViolation(
                        "missing_principal_record",
                        record.seq,
                        f"re-evaluation for {entry['vertex_id']} lacks subject record",
                    )
                )
                continue
            ok = (entry["resource"], Action.READ) in scope
            reevals_ok = reevals_ok and ok
            if ok != entry["allowed"]:
                self.delivery.append(
                    AuditViolation(
                        "reevaluation_mismatch",
                        record.seq,
                        f"re-evaluation of {entry['vertex_id']}/{entry['resource']}: "
                        f"recorded {entry['allowed']}, recomputed {ok}",
                    )
                )
        expected_allowed = not failures and expected_agg.allowed and reevals_ok
        claimed_allowed = payload["decision"] == "allow"
        if claimed_allowed != expected_allowed:
            self.delivery.append(
                AuditViolation(
                    "delivery_decision_mismatch",
                    record.seq,
                    f"recorded {payload['decision']!r}, recomputed "
                    f"{'allow' if expected_allowed else 'deny'}",
                )
            )
        if claimed_allowed:
            self._allowed_deliveries.add((payload["vertex_id"], payload["artifact_id"]))
        else:
            self._deny_seen = True

    def _check_delivered_record(self, record: TraceRecord) -> None:
        payload = record.payload
        self.counts["delivery"] += 1
        key = (payload["vertex_id"], payload["artifact_id"])
        if key not in self._allowed_deliveries:
            self.delivery.append(
                AuditViolation(
                    "undocumented_delivery",
                    record.seq,
                    f"artifact {payload['artifact_id']} delivered at {payload['vertex_id']} "
                    "without a preceding allow decision",
                )
            )
        disclosure = payload.get("disclosure", {})
        if disclosure.get("complete") and self._deny_seen:
            self.delivery.append(
                AuditViolation(
                    "disclosure_overclaim",
                    record.seq,
                    "delivery disclosed a complete result after earlier denials",
                )
            )

    # -- driver ---------------------------------------------------------

    def run(self) -> AuditVerdict:
        integrity = verify_integrity(self.trace)
        if not integrity.intact:
            raise BrokenTrace(
                f"refusing to audit a broken trace: {integrity.reason} "
                f"(record {integrity.broken_at})"
            )
        for record in self.trace.records:
            if record.event is TraceEvent.VALIDITY_CHECKED:
                self._check_validity_record(record)
            elif record.event is TraceEvent.ACCESS_DECIDED:
                self._check_access_record(record)
            elif record.event is TraceEvent.SYNTHESIS_DECIDED:
                self._check_synthesis_record(record)
            elif record.event is TraceEvent.DELIVERY_DECIDED:
                self._check_delivery_record(record)
            elif record.event is TraceEvent.DELIVERED:
                self._check_delivered_record(record)
        return AuditVerdict(
            access=SubVerdict("access", self.counts["access"], tuple(self.access)),
            chain=SubVerdict("chain", self.counts["chain"], tuple(self.chain)),
            aggregation=SubVerdict(
                "aggregation", self.counts["aggregation"], tuple(self.aggregation)
            ),
            delivery=SubVerdict("delivery", self.counts["delivery"], tuple(self.delivery)),
        )


def audit(trace: WorkflowTrace) -> AuditVerdict:
    """Audit a parsed trace: recompute every decision from embedded context.

    Raises BrokenTrace when the hash chain does not verify; a trace that
    fails integrity cannot be trusted enough to audit.
    """
    return _Auditor(trace).run()


def audit_bytes(data: bytes) -> AuditVerdict:
    """Parse and audit serialized trace bytes."""
    from .trace import trace_from_bytes

    return audit(trace_from_bytes(data))


@dataclass(frozen=True)
class TaintedDelivery:
    recipient: str
    artifact_id: str
    vertex_id: str

    def to_json(self) -> dict:
        return {
            "recipient": self.recipient,
            "artifact_id": self.artifact_id,
            "vertex_id": self.vertex_id,
        }


@dataclass(frozen=True)
class TaintReport:
    """Forward contamination closure of one access through the dataflow."""

    origin: int
    origin_vertex: str
    tainted_vertices: tuple[str, ...]
    tainted_artifacts: tuple[str, ...]
    delivered_tainted: tuple[TaintedDelivery, ...]

    def to_json(self) -> dict:
        return {
            "origin": self.origin,
            "origin_vertex": self.origin_vertex,
            "tainted_vertices": list(self.tainted_vertices),
            "tainted_artifacts": list(self.tainted_artifacts),
            "delivered_tainted": [d.to_json() for d in self.delivered_tainted],
        }


def _artifact_closure(
    trace: WorkflowTrace, seeds: set[str]
) -> tuple[set[str], dict[str, tuple[str, tuple[str, ...]]]]:
    """Forward closure of artifact ids under the consumed-as-input relation."""
    produced: dict[str, tuple[str, tuple[str, ...]]] = {}
    for record in trace.records:
        if record.event is TraceEvent.ARTIFACT_PRODUCED:
            produced[record.payload["artifact_id"]] = (
                record.payload["vertex_id"],
                tuple(record.payload.get("input_artifacts", ())),
            )
    tainted = set(seeds)
    changed = True
    while changed:
        changed = False
        for aid, (_vertex, inputs) in produced.items():
            if aid not in tainted and any(i in tainted for i in inputs):
                tainted.add(aid)
                changed = True
    return tainted, produced


def taint(trace: WorkflowTrace, origin_seq: int) -> TaintReport:
    """Everything downstream of one access decision, from the trace alone.

    The origin must be an access-decision record; its vertex seeds the
    closure. Artifacts are tainted when produced by the origin vertex or
    when they consumed any tainted artifact; deliveries of tainted artifacts
    are flagged with their recipients. A denied origin produced nothing, so
    its report taints only the origin vertex itself.
    """
    record = None
    for r in trace.records:
        if r.seq == origin_seq:
            record = r
            break
    if record is None:
        raise NotAnAccessRecord(f"no record at seq {origin_seq}")
    if record.event is not TraceEvent.ACCESS_DECIDED:
        raise NotAnAccessRecord(
            f"record {origin_seq} is {record.event.value}, not an access decision"
        )
    origin_vertex = record.payload["vertex_id"]
    seeds = set()
    for r in trace.records:
        if (
            r.event is TraceEvent.ARTIFACT_PRODUCED
            and r.payload["vertex_id"] == origin_vertex
        ):
            seeds.add(r.payload["artifact_id"])
    tainted, produced = _artifact_closure(trace, seeds)
    vertices = {origin_vertex} | {produced[aid][0] for aid in tainted if aid in produced}
    deliveries = []
    for r in trace.records:
        if r.event is TraceEvent.DELIVERED and r.payload["artifact_id"] in tainted:
            deliveries.append(
                TaintedDelivery(
                    recipient=r.payload["recipient"],
                    artifact_id=r.payload["artifact_id"],
                    vertex_id=r.payload["vertex_id"],
                )
            )
    return TaintReport(
        origin=origin_seq,
        origin_vertex=origin_vertex,
        tainted_vertices=tuple(sorted(vertices)),
        tainted_artifacts=tuple(sorted(tainted)),
        delivered_tainted=tuple(deliveries),
    )


def taint_artifact(trace: WorkflowTrace, artifact_id: str) -> tuple[str, ...]:
    """Forward closure of one produced artifact; ForeignArtifact if absent."""
    produced_ids = {
        r.payload["artifact_id"]
        for r in trace.records
        if r.event is TraceEvent.ARTIFACT_PRODUCED
    }
    if artifact_id not in produced_ids:
        raise ForeignArtifact(f"artifact {artifact_id!r} was not produced in this trace")
    tainted, _ = _artifact_closure(trace, {artifact_id})
    return tuple(sorted(tainted))
