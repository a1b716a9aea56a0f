"""Delegation tokens: attenuation chains, revocation, and effective authority.

A token is a plain append-only chain of attenuation blocks; there is no
cryptography, verification is structural. Scopes may only shrink along the
chain, each block's issuer is the previous block's subject, and the whole
chain hangs off a self-issued root block whose grants the initiator had to
hold at mint time.

What a holder may actually do is never the token scope alone. Effective
authority is the three-way meet of

  1. the root scope filtered through what the initiator can still exercise
     at the policy evaluation time,
  2. the meet of every block scope in the chain,
  3. the subject's own authority (base scope, plus store-derived grants for
     humans).

so delegation can only ever narrow, and an initiator losing a grant drags
every downstream token down with them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Mapping

from .errors import (
    ClockRegression,
    InvalidChain,
    ScopeEscalation,
    ScopeExceedsInitiator,
    UnattestedSubject,
    UnknownHolder,
    UnknownSubject,
)
from .model import (
    Action,
    Catalog,
    EMPTY_SCOPE,
    Principal,
    PrincipalId,
    PrincipalKind,
    Scope,
    scope_meet,
)
from .store import Tick, TupleStore


class ValidityMode(str, Enum):
    WORKFLOW_LIFETIME = "workflow_lifetime"
    WALL_CLOCK_TTL = "wall_clock_ttl"
    EXEC_COUNT = "exec_count"


@dataclass(frozen=True)
class ValiditySpec:
    """How often a holder must re-consult the revocation registry.

    workflow_lifetime consults on every use. wall_clock_ttl(d) may rely on a
    cached answer until d ticks have passed since the last consult.
    exec_count(n) may rely on a cached answer for at most n - 1 operations
    between consults.
    """

    mode: ValidityMode
    ttl: int | None = None
    count: int | None = None

    def __post_init__(self) -> None:
        if not self.well_formed():
            raise ValueError(f"malformed validity spec: {self}")

    def well_formed(self) -> bool:
        if self.mode is ValidityMode.WORKFLOW_LIFETIME:
            return self.ttl is None and self.count is None
        if self.mode is ValidityMode.WALL_CLOCK_TTL:
            return isinstance(self.ttl, int) and self.ttl > 0 and self.count is None
        if self.mode is ValidityMode.EXEC_COUNT:
            return isinstance(self.count, int) and self.count >= 1 and self.ttl is None
        return False

    @classmethod
    def workflow_lifetime(cls) -> "ValiditySpec":
        return cls(mode=ValidityMode.WORKFLOW_LIFETIME)

    @classmethod
    def wall_clock_ttl(cls, ticks: int) -> "ValiditySpec":
        return cls(mode=ValidityMode.WALL_CLOCK_TTL, ttl=ticks)

    @classmethod
    def exec_count(cls, n: int) -> "ValiditySpec":
        return cls(mode=ValidityMode.EXEC_COUNT, count=n)

    def to_json(self) -> dict:
        out: dict = {"mode": self.mode.value}
        if self.ttl is not None:
            out["ttl"] = self.ttl
        if self.count is not None:
            out["count"] = self.count
        return out

    @classmethod
    def from_json(cls, data: Mapping) -> "ValiditySpec":
        return cls(
            mode=ValidityMode(data["mode"]),
            ttl=data.get("ttl"),
            count=data.get("count"),
        )


@dataclass(frozen=True)
class AttenuationBlock:
    seq: int
    issuer: PrincipalId
    subject: PrincipalId
    scope: Scope
    validity: ValiditySpec
    issued_at: Tick

    def to_json(self) -> dict:
        return {
            "seq": self.seq,
            "issuer": self.issuer,
            "subject": self.subject,
            "scope": self.scope.to_json(),
            "validity": self.validity.to_json(),
            "issued_at": self.issued_at,
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "AttenuationBlock":
        return cls(
            seq=data["seq"],
            issuer=data["issuer"],
            subject=data["subject"],
            scope=Scope.from_json(data["scope"]),
            validity=ValiditySpec.from_json(data["validity"]),
            issued_at=data["issued_at"],
        )


@dataclass(frozen=True)
class DelegationToken:
    token_id: str
    workflow_id: str
    blocks: tuple[AttenuationBlock, ...]

    @property
    def root(self) -> AttenuationBlock:
        return self.blocks[0]

    @property
    def initiator(self) -> PrincipalId:
        return self.blocks[0].issuer

    @property
    def current_subject(self) -> PrincipalId:
        return self.blocks[-1].subject

    @property
    def current_validity(self) -> ValiditySpec:
        return self.blocks[-1].validity

    @property
    def principals(self) -> frozenset[PrincipalId]:
        return frozenset(p for b in self.blocks for p in (b.issuer, b.subject))

    def chain_meet(self) -> Scope:
        return scope_meet(b.scope for b in self.blocks)

    def to_json(self) -> dict:
        return {
            "token_id": self.token_id,
            "workflow_id": self.workflow_id,
            "blocks": [b.to_json() for b in self.blocks],
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "DelegationToken":
        return cls(
            token_id=data["token_id"],
            workflow_id=data["workflow_id"],
            blocks=tuple(AttenuationBlock.from_json(b) for b in data["blocks"]),
        )


@dataclass(frozen=True)
class ChainVerdict:
    valid: bool
    violation: str | None = None
    at_seq: int | None = None

    def to_json(self) -> dict:
        return {"valid": self.valid, "violation": self.violation, "at_seq": self.at_seq}


@dataclass(frozen=True)
class EffectiveAuthority:
    """The meet that governs a holder's actual authority, with its operands."""

    scope: Scope
    initiator_scope: Scope
    chain_meet: Scope
    subject_scope: Scope
    evaluated_at: Tick
    at_tick: Tick

    def to_json(self) -> dict:
        return {
            "scope": self.scope.to_json(),
            "initiator_scope": self.initiator_scope.to_json(),
            "chain_meet": self.chain_meet.to_json(),
            "subject_scope": self.subject_scope.to_json(),
            "evaluated_at": self.evaluated_at,
            "at_tick": self.at_tick,
        }


class RevocationRegistry:
    """Append-only log of revocation events, ordered by tick.

    A token counts as revoked at t when any event at or before t targets
    either the token id itself or any principal appearing anywhere in its
    chain. Revoking a mid-chain principal therefore kills the whole token;
    there is no re-rooting of the suffix.
    """

    def __init__(self) -> None:
        self._events: list[tuple[str, Tick]] = []

    @property
    def events(self) -> tuple[tuple[str, Tick], ...]:
        return tuple(self._events)

    def revoke(self, target: str, at: Tick) -> None:
        if self._events and at < self._events[-1][1]:
            raise ClockRegression(
                f"revocation at {at} predates last registry event at {self._events[-1][1]}"
            )
        self._events.append((target, at))

    def revoke_token(self, token_id: str, at: Tick) -> None:
        self.revoke(token_id, at)

    def revoke_principal(self, principal_id: PrincipalId, at: Tick) -> None:
        self.revoke(principal_id, at)

    def is_revoked(self, token: DelegationToken, at: Tick) -> bool:
        targets = {token.token_id} | set(token.principals)
        return any(target in targets and t <= at for target, t in self._events)

    def slice_for(self, token: DelegationToken, at: Tick) -> list[dict]:
        targets = {token.token_id} | set(token.principals)
        return [
            {"target": target, "at": t}
            for target, t in self._events
            if target in targets and t <= at
        ]


@dataclass
class CoherenceEntry:
    ops_since_check: int = 0
    last_check_at: Tick | None = None
    cached_valid: bool | None = None

    def to_json(self) -> dict:
        return {
            "ops_since_check": self.ops_since_check,
            "last_check_at": self.last_check_at,
            "cached_valid": self.cached_valid,
        }


class CoherenceState:
    """Per (token, holder) cache-consult accounting for check_validity."""

    def __init__(self) -> None:
        self._entries: dict[tuple[str, PrincipalId], CoherenceEntry] = {}

    def entry(self, token_id: str, holder: PrincipalId) -> CoherenceEntry:
        return self._entries.setdefault((token_id, holder), CoherenceEntry())


@dataclass(frozen=True)
class ValidityResult:
    valid: bool
    stale_cache_used: bool
    consulted: bool

    def to_json(self) -> dict:
        return {
            "valid": self.valid,
            "stale_cache_used": self.stale_cache_used,
            "consulted": self.consulted,
        }


def mint_root(
    initiator: Principal,
    workflow_id: str,
    scope: Scope,
    validity: ValiditySpec,
    t: Tick,
    store: TupleStore,
    token_id: str = "tok-root",
) -> DelegationToken:
    """Mint a self-issued root token after proving the initiator holds every grant."""
    offending = [
        (rid, action)
        for rid, action in scope.sorted_grants
        if not store.auth_check(initiator.id, action, rid, t)
    ]
    if offending:
        pretty = ", ".join(f"{a.value}:{r}" for r, a in offending)
        raise ScopeExceedsInitiator(
            f"initiator {initiator.id!r} cannot exercise: {pretty}", offending
        )
    block = AttenuationBlock(
        seq=0,
        issuer=initiator.id,
        subject=initiator.id,
        scope=scope,
        validity=validity,
        issued_at=t,
    )
    return DelegationToken(token_id=token_id, workflow_id=workflow_id, blocks=(block,))


def attenuate(
    token: DelegationToken,
    new_subject: Principal,
    narrowed_scope: Scope,
    validity: ValiditySpec,
    t: Tick,
    catalog: Catalog,
    token_id: str | None = None,
) -> DelegationToken:
    """Append an attenuation block, returning a new token value.

    The narrowed scope must stay inside the parent block scope; when the
    catalog requires attestation, agent subjects must carry it. The original
    token is untouched, so one parent may fan out to several children.
    """
    parent = token.blocks[-1]
    if not narrowed_scope.issubset(parent.scope):
        extra = narrowed_scope.grants - parent.scope.grants
        pretty = ", ".join(sorted(f"{a.value}:{r}" for r, a in extra))
        raise ScopeEscalation(f"attenuation widens scope with: {pretty}")
    if not catalog.has_principal(new_subject.id):
        raise UnknownSubject(f"unknown principal: {new_subject.id!r}")
    if catalog.require_attestation and new_subject.is_agent and not new_subject.attested:
        raise UnattestedSubject(
            f"delegation to unattested agent {new_subject.id!r} is not permitted"
        )
    if t < parent.issued_at:
        raise ClockRegression(
            f"attenuation at {t} predates parent block issued at {parent.issued_at}"
        )
    block = AttenuationBlock(
        seq=parent.seq + 1,
        issuer=parent.subject,
        subject=new_subject.id,
        scope=narrowed_scope,
        validity=validity,
        issued_at=t,
    )
    return DelegationToken(
        token_id=token_id if token_id is not None else f"{token.token_id}/{block.seq}",
        workflow_id=token.workflow_id,
        blocks=token.blocks + (block,),
    )


def verify_chain_with(
    token: DelegationToken,
    lookup: Callable[[PrincipalId], Principal | None],
    require_attestation: bool,
    known_resource: Callable[[str], bool] | None = None,
) -> ChainVerdict:
    """Structural chain verification against a pluggable principal lookup.

    The lookup makes the same check usable online (catalog-backed) and
    offline (audit-payload-backed). The first violated invariant wins.
    """
    if not token.blocks:
        return ChainVerdict(False, "empty_chain", None)
    prev: AttenuationBlock | None = None
    for k, block in enumerate(token.blocks):
        if block.seq != k:
            return ChainVerdict(False, "sequence_gap", block.seq)
        if not block.validity.well_formed():
            return ChainVerdict(False, "malformed_validity", block.seq)
        for pid in (block.issuer, block.subject):
            if lookup(pid) is None:
                return ChainVerdict(False, "unknown_principal", block.seq)
        if known_resource is not None:
            for rid, _ in block.scope.sorted_grants:
                if not known_resource(rid):
                    return ChainVerdict(False, "unknown_resource", block.seq)
        if k == 0:
            if block.issuer != block.subject:
                return ChainVerdict(False, "root_not_self_issued", 0)
        else:
            assert prev is not None
            if block.issuer != prev.subject:
                return ChainVerdict(False, "broken_linkage", block.seq)
            if not block.scope.issubset(prev.scope):
                return ChainVerdict(False, "scope_escalation", block.seq)
            if block.issued_at < prev.issued_at:
                return ChainVerdict(False, "time_regression", block.seq)
        subject = lookup(block.subject)
        if (
            require_attestation
            and subject is not None
            and subject.kind is PrincipalKind.AGENT
            and not subject.attested
        ):
            return ChainVerdict(False, "unattested_subject", block.seq)
        prev = block
    return ChainVerdict(True)


def verify_chain(token: DelegationToken, catalog: Catalog) -> ChainVerdict:
    """Catalog-backed chain verification. Returns a verdict, never raises."""
    return verify_chain_with(
        token,
        lambda pid: catalog.principals_by_id.get(pid),
        catalog.require_attestation,
        known_resource=catalog.has_resource,
    )


def subject_authority(principal: Principal, store: TupleStore, t: Tick) -> Scope:
    """A principal's own authority at t.

    Agents carry exactly their explicit base scope. Humans additionally
    derive whatever the tuple store grants them at t.
    """
    if principal.kind is PrincipalKind.HUMAN:
        derived = store.derived_scope(principal.id, t)
        return Scope(principal.base_scope.grants | derived.grants)
    return principal.base_scope


def effective_authority(
    token: DelegationToken,
    t: Tick,
    store: TupleStore,
    catalog: Catalog,
    policy_eval_time: Tick,
) -> EffectiveAuthority:
    """Compute the three-way meet governing the current subject's authority.

    The initiator operand re-filters the root scope through auth_check at
    policy_eval_time, so grants the initiator has lost since mint drop out.
    Raises InvalidChain when the token does not verify.
    """
    verdict = verify_chain(token, catalog)
    if not verdict.valid:
        raise InvalidChain(
            f"token {token.token_id!r} failed verification: "
            f"{verdict.violation} at seq {verdict.at_seq}"
        )
    initiator_scope = Scope.of(
        *(
            (rid, action)
            for rid, action in token.root.scope.sorted_grants
            if store.auth_check(token.initiator, action, rid, policy_eval_time)
        )
    )
    chain = token.chain_meet()
    subject = catalog.principal(token.current_subject)
    subject_scope = subject_authority(subject, store, policy_eval_time)
    meet = initiator_scope.intersect(chain).intersect(subject_scope)
    return EffectiveAuthority(
        scope=meet,
        initiator_scope=initiator_scope,
        chain_meet=chain,
        subject_scope=subject_scope,
        evaluated_at=policy_eval_time,
        at_tick=t,
    )


def check_validity(
    token: DelegationToken,
    holder: PrincipalId,
    clock: Tick,
    registry: RevocationRegistry,
    coherence: CoherenceState,
) -> ValidityResult:
    """Validity decision under the token's cache-coherence mode.

    workflow_lifetime consults the registry on every call. The cached modes
    consult when their budget is spent (ttl ticks elapsed, or the operation
    counter about to reach n) and otherwise answer from cache, flagging
    stale_cache_used when a fresh consult would have disagreed. The flag is
    the signal later surfaced as unauthorized-operation exposure: exec_count
    admits at most n post-revocation operations regardless of velocity,
    wall_clock_ttl admits roughly velocity * ttl.
    """
    if holder != token.current_subject:
        raise UnknownHolder(
            f"{holder!r} does not hold token {token.token_id!r} "
            f"(current subject: {token.current_subject!r})"
        )
    spec = token.current_validity
    entry = coherence.entry(token.token_id, holder)

    def consult() -> ValidityResult:
        fresh = not registry.is_revoked(token, clock)
        entry.cached_valid = fresh
        entry.last_check_at = clock
        entry.ops_since_check = 0
        return ValidityResult(valid=fresh, stale_cache_used=False, consulted=True)

    def cached() -> ValidityResult:
        entry.ops_since_check += 1
        assert entry.cached_valid is not None
        truth = not registry.is_revoked(token, clock)
        return ValidityResult(
            valid=entry.cached_valid,
            stale_cache_used=entry.cached_valid != truth,
            consulted=False,
        )

    if spec.mode is ValidityMode.WORKFLOW_LIFETIME or entry.cached_valid is None:
        return consult()
    if spec.mode is ValidityMode.EXEC_COUNT:
        assert spec.count is not None
        if entry.ops_since_check + 1 >= spec.count:
            return consult()
        return cached()
    assert spec.mode is ValidityMode.WALL_CLOCK_TTL and spec.ttl is not None
    assert entry.last_check_at is not None
    if clock - entry.last_check_at >= spec.ttl:
        return consult()
    return cached()
