"""Delegation chains: minting, attenuation, verification, revocation, caching.

The cache-coherence schedules are frozen as literal hand-traced tables; the
chain-corruption cases each target one structural invariant and assert the
exact violation code.
"""

import dataclasses

import pytest

from authprop.delegation import (
    AttenuationBlock,
    CoherenceState,
    DelegationToken,
    RevocationRegistry,
    ValidityMode,
    ValiditySpec,
    attenuate,
    check_validity,
    effective_authority,
    mint_root,
    subject_authority,
    verify_chain,
)
from authprop.errors import (
    ClockRegression,
    InvalidChain,
    ScopeEscalation,
    ScopeExceedsInitiator,
    UnattestedSubject,
    UnknownHolder,
    UnknownSubject,
)
from authprop.model import Action, Catalog, Principal, PrincipalKind, Resource, Scope
from authprop.store import AuthorizationTuple, DirectGrant, TupleStore

READ = Action.READ
WRITE = Action.WRITE


def make_catalog(require_attestation=False) -> Catalog:
    return Catalog(
        principals=(
            Principal("alice", PrincipalKind.HUMAN, attested=True),
            Principal("bob", PrincipalKind.HUMAN, attested=True),
            Principal(
                "bot-1",
                PrincipalKind.AGENT,
                Scope.of(("res-a", READ), ("res-b", READ), ("res-b", WRITE)),
                attested=True,
            ),
            Principal("bot-2", PrincipalKind.AGENT, Scope.of(("res-a", READ)), attested=True),
            Principal("bot-raw", PrincipalKind.AGENT, Scope.of(("res-a", READ)), attested=False),
        ),
        resources=(Resource("res-a"), Resource("res-b"), Resource("res-c")),
        require_attestation=require_attestation,
    )


def make_store(catalog: Catalog) -> TupleStore:
    store = TupleStore(catalog=catalog)
    for rid in ("res-a", "res-b", "res-c"):
        store.add(AuthorizationTuple("alice", DirectGrant(READ, rid), 0))
    store.add(AuthorizationTuple("alice", DirectGrant(WRITE, "res-b"), 0))
    return store


def chain_ab(catalog, store) -> DelegationToken:
    root = mint_root(
        Principal("alice", PrincipalKind.HUMAN, attested=True),
        "wf-1",
        Scope.of(("res-a", READ), ("res-b", READ), ("res-b", WRITE)),
        ValiditySpec.workflow_lifetime(),
        0,
        store,
    )
    mid = attenuate(
        root,
        catalog.principal("bot-1"),
        Scope.of(("res-a", READ), ("res-b", READ)),
        ValiditySpec.workflow_lifetime(),
        1,
        catalog,
    )
    return attenuate(
        mid,
        catalog.principal("bot-2"),
        Scope.of(("res-a", READ)),
        ValiditySpec.workflow_lifetime(),
        2,
        catalog,
    )


class TestMint:
    def test_mint_requires_initiator_authority(self):
        catalog = make_catalog()
        store = make_store(catalog)
        alice = catalog.principal("alice")
        with pytest.raises(ScopeExceedsInitiator):
            mint_root(alice, "wf-1", Scope.of(("res-a", WRITE)), ValiditySpec.workflow_lifetime(), 0, store)

    def test_mint_produces_self_issued_root(self):
        catalog = make_catalog()
        store = make_store(catalog)
        token = mint_root(
            catalog.principal("alice"),
            "wf-1",
            Scope.of(("res-a", READ)),
            ValiditySpec.workflow_lifetime(),
            0,
            store,
        )
        assert token.root.issuer == token.root.subject == "alice"
        assert token.initiator == "alice"
        assert token.current_subject == "alice"
        assert verify_chain(token, catalog).valid


class TestAttenuate:
    def test_scope_may_only_shrink(self):
        catalog = make_catalog()
        store = make_store(catalog)
        token = chain_ab(catalog, store)
        with pytest.raises(ScopeEscalation):
            attenuate(
                token,
                catalog.principal("bot-1"),
                Scope.of(("res-a", READ), ("res-b", READ)),
                ValiditySpec.workflow_lifetime(),
                3,
                catalog,
            )

    def test_unknown_subject_rejected(self):
        catalog = make_catalog()
        store = make_store(catalog)
        token = chain_ab(catalog, store)
        ghost = Principal("ghost", PrincipalKind.AGENT, attested=True)
        with pytest.raises(UnknownSubject):
            attenuate(token, ghost, Scope.of(("res-a", READ)), ValiditySpec.workflow_lifetime(), 3, catalog)

    def test_attestation_gate_only_when_required(self):
        lax = make_catalog(require_attestation=False)
        strict = make_catalog(require_attestation=True)
        store = make_store(lax)
        token = chain_ab(lax, store)
        raw = lax.principal("bot-raw")
        narrowed = Scope.of(("res-a", READ))
        attenuate(token, raw, narrowed, ValiditySpec.workflow_lifetime(), 3, lax)
        with pytest.raises(UnattestedSubject):
            attenuate(token, raw, narrowed, ValiditySpec.workflow_lifetime(), 3, strict)

    def test_time_regression_rejected(self):
        catalog = make_catalog()
        store = make_store(catalog)
        token = chain_ab(catalog, store)
        with pytest.raises(ClockRegression):
            attenuate(
                token,
                catalog.principal("bot-2"),
                Scope.of(("res-a", READ)),
                ValiditySpec.workflow_lifetime(),
                1,
                catalog,
            )

    def test_derived_token_id_and_fanout(self):
        catalog = make_catalog()
        store = make_store(catalog)
        token = chain_ab(catalog, store)
        assert token.token_id == "tok-root/1/2"
        child_a = attenuate(
            token, catalog.principal("bot-2"), Scope.of(("res-a", READ)),
            ValiditySpec.workflow_lifetime(), 3, catalog,
        )
        child_b = attenuate(
            token, catalog.principal("bot-1"), Scope.of(("res-a", READ)),
            ValiditySpec.workflow_lifetime(), 3, catalog,
        )
        assert len(token.blocks) == 3  # parent untouched
        assert child_a.blocks[:3] == token.blocks == child_b.blocks[:3]


class TestChainCorruption:
    """Each corruption flips exactly one field and must trip one invariant."""

    def _token(self):
        catalog = make_catalog()
        store = make_store(catalog)
        return catalog, chain_ab(catalog, store)

    def _replace_block(self, token, idx, **changes):
        blocks = list(token.blocks)
        blocks[idx] = dataclasses.replace(blocks[idx], **changes)
        return DelegationToken(token.token_id, token.workflow_id, tuple(blocks))

    def test_empty_chain(self):
        catalog, token = self._token()
        verdict = verify_chain(DelegationToken("tok-x", "wf-1", ()), catalog)
        assert (verdict.valid, verdict.violation) == (False, "empty_chain")

    def test_sequence_gap(self):
        catalog, token = self._token()
        bad = self._replace_block(token, 1, seq=2)
        verdict = verify_chain(bad, catalog)
        assert (verdict.violation, verdict.at_seq) == ("sequence_gap", 2)

    def test_malformed_validity(self):
        catalog, token = self._token()
        broken = ValiditySpec.__new__(ValiditySpec)
        object.__setattr__(broken, "mode", ValidityMode.WALL_CLOCK_TTL)
        object.__setattr__(broken, "ttl", 0)
        object.__setattr__(broken, "count", None)
        bad = self._replace_block(token, 1, validity=broken)
        assert verify_chain(bad, catalog).violation == "malformed_validity"

    def test_unknown_principal(self):
        catalog, token = self._token()
        bad = self._replace_block(token, 2, subject="ghost")
        assert verify_chain(bad, catalog).violation == "unknown_principal"

    def test_unknown_resource(self):
        catalog, token = self._token()
        bad = self._replace_block(token, 2, scope=Scope.of(("res-z", READ)))
        assert verify_chain(bad, catalog).violation == "unknown_resource"

    def test_root_not_self_issued(self):
        catalog, token = self._token()
        bad = self._replace_block(token, 0, issuer="bob")
        assert verify_chain(bad, catalog).violation == "root_not_self_issued"

    def test_broken_linkage(self):
        catalog, token = self._token()
        bad = self._replace_block(token, 2, issuer="bob")
        verdict = verify_chain(bad, catalog)
        assert (verdict.violation, verdict.at_seq) == ("broken_linkage", 2)

    def test_scope_escalation(self):
        catalog, token = self._token()
        bad = self._replace_block(token, 2, scope=Scope.of(("res-a", READ), ("res-c", READ)))
        verdict = verify_chain(bad, catalog)
        assert (verdict.violation, verdict.at_seq) == ("scope_escalation", 2)

    def test_time_regression(self):
        catalog, token = self._token()
        bad = self._replace_block(token, 2, issued_at=0)
        assert verify_chain(bad, catalog).violation == "time_regression"

    def test_unattested_subject(self):
        catalog = make_catalog(require_attestation=True)
        store = make_store(catalog)
        token = chain_ab(catalog, store)
        bad = self._replace_block(token, 2, subject="bot-raw")
        assert verify_chain(bad, catalog).violation == "unattested_subject"


class TestEffectiveAuthority:
    def test_three_way_meet_operands(self):
        catalog = make_catalog()
        store = make_store(catalog)
        store.advance_to(2)
        token = chain_ab(catalog, store)
        ea = effective_authority(token, 2, store, catalog, 2)
        # chain meet narrows to res-a read; bot-2's base covers it.
        assert ea.scope == Scope.of(("res-a", READ))
        assert ea.chain_meet == Scope.of(("res-a", READ))
        assert ea.initiator_scope == Scope.of(("res-a", READ), ("res-b", READ), ("res-b", WRITE))
        assert ea.subject_scope == Scope.of(("res-a", READ))

    def test_initiator_losing_a_grant_drags_the_chain_down(self):
        catalog = make_catalog()
        store = make_store(catalog)
        token = chain_ab(catalog, store)
        store.advance_to(5)
        store.revoke(0, 5)  # alice's res-a read
        ea_before = effective_authority(token, 5, store, catalog, 4)
        ea_after = effective_authority(token, 5, store, catalog, 5)
        assert ("res-a", READ) in ea_before.scope
        assert ea_after.scope == Scope.of()

    def test_invalid_chain_raises(self):
        catalog = make_catalog()
        store = make_store(catalog)
        token = chain_ab(catalog, store)
        blocks = (token.blocks[0], dataclasses.replace(token.blocks[1], seq=5), token.blocks[2])
        bad = DelegationToken(token.token_id, token.workflow_id, blocks)
        with pytest.raises(InvalidChain):
            effective_authority(bad, 2, store, catalog, 2)

    def test_humans_derive_store_scope_agents_do_not(self):
        catalog = make_catalog()
        store = make_store(catalog)
        alice = catalog.principal("alice")
        bot = catalog.principal("bot-2")
        assert ("res-c", READ) in subject_authority(alice, store, 0)
        store_granted_bot = TupleStore(catalog=catalog)
        store_granted_bot.add(AuthorizationTuple("bot-2", DirectGrant(READ, "res-c"), 0))
        # The tuple exists, but agents do not derive authority from tuples.
        assert ("res-c", READ) not in subject_authority(bot, store_granted_bot, 0)


class TestRevocationRegistry:
    def test_token_and_principal_targets(self):
        catalog = make_catalog()
        store = make_store(catalog)
        token = chain_ab(catalog, store)
        registry = RevocationRegistry()
        assert not registry.is_revoked(token, 10)
        registry.revoke_token(token.token_id, 3)
        assert not registry.is_revoked(token, 2)
        assert registry.is_revoked(token, 3)

    def test_mid_chain_principal_revocation_kills_the_token(self):
        catalog = make_catalog()
        store = make_store(catalog)
        token = chain_ab(catalog, store)
        registry = RevocationRegistry()
        registry.revoke_principal("bot-1", 4)
        assert registry.is_revoked(token, 4)
        # Unrelated principals do not.
        other = RevocationRegistry()
        other.revoke_principal("bob", 4)
        assert not other.is_revoked(token, 10)

    def test_registry_clock_monotonicity(self):
        registry = RevocationRegistry()
        registry.revoke("x", 5)
        with pytest.raises(ClockRegression):
            registry.revoke("y", 4)

    def test_slice_is_filtered_and_bounded(self):
        catalog = make_catalog()
        store = make_store(catalog)
        token = chain_ab(catalog, store)
        registry = RevocationRegistry()
        registry.revoke("unrelated", 1)
        registry.revoke_token(token.token_id, 2)
        registry.revoke_principal("bot-2", 6)
        assert registry.slice_for(token, 4) == [{"target": token.token_id, "at": 2}]


class TestCacheCoherence:
    def _setup(self, validity: ValiditySpec):
        catalog = make_catalog()
        store = make_store(catalog)
        root = mint_root(
            catalog.principal("alice"), "wf-1", Scope.of(("res-a", READ)), validity, 0, store
        )
        token = attenuate(
            root, catalog.principal("bot-2"), Scope.of(("res-a", READ)), validity, 0, catalog
        )
        return token, RevocationRegistry(), CoherenceState()

    def test_workflow_lifetime_consults_every_time(self):
        token, registry, coherence = self._setup(ValiditySpec.workflow_lifetime())
        for clock in range(4):
            result = check_validity(token, "bot-2", clock, registry, coherence)
            assert (result.valid, result.consulted, result.stale_cache_used) == (True, True, False)
        registry.revoke_token(token.token_id, 4)
        result = check_validity(token, "bot-2", 4, registry, coherence)
        assert (result.valid, result.consulted, result.stale_cache_used) == (False, True, False)

    def test_exec_count_hand_trace(self):
        """n=3, revoke right after op 1: ops 2 and 3 ride the stale cache
        (flagged), op 4 consults and denies."""
        token, registry, coherence = self._setup(ValiditySpec.exec_count(3))
        r1 = check_validity(token, "bot-2", 0, registry, coherence)
        registry.revoke_token(token.token_id, 0)
        r2 = check_validity(token, "bot-2", 0, registry, coherence)
        r3 = check_validity(token, "bot-2", 0, registry, coherence)
        r4 = check_validity(token, "bot-2", 0, registry, coherence)
        table = [
            (r.valid, r.consulted, r.stale_cache_used) for r in (r1, r2, r3, r4)
        ]
        assert table == [
            (True, True, False),
            (True, False, True),
            (True, False, True),
            (False, True, False),
        ]

    def test_wall_clock_ttl_hand_trace(self):
        """ttl=10, consult at tick 0, revoke at tick 1: one op per tick rides
        the stale cache through tick 9, tick 10 consults and denies."""
        token, registry, coherence = self._setup(ValiditySpec.wall_clock_ttl(10))
        r0 = check_validity(token, "bot-2", 0, registry, coherence)
        assert (r0.valid, r0.consulted) == (True, True)
        registry.revoke_token(token.token_id, 1)
        for tick in range(1, 10):
            r = check_validity(token, "bot-2", tick, registry, coherence)
            assert (r.valid, r.consulted, r.stale_cache_used) == (True, False, True), tick
        r10 = check_validity(token, "bot-2", 10, registry, coherence)
        assert (r10.valid, r10.consulted, r10.stale_cache_used) == (False, True, False)

    def test_caches_are_per_token_and_holder(self):
        token, registry, coherence = self._setup(ValiditySpec.exec_count(5))
        check_validity(token, "bot-2", 0, registry, coherence)
        sibling = DelegationToken("tok-other", token.workflow_id, token.blocks)
        result = check_validity(sibling, "bot-2", 0, registry, coherence)
        assert result.consulted  # separate token id, separate cache entry

    def test_wrong_holder_rejected(self):
        token, registry, coherence = self._setup(ValiditySpec.workflow_lifetime())
        with pytest.raises(UnknownHolder):
            check_validity(token, "bot-1", 0, registry, coherence)


class TestValiditySpec:
    def test_constructors_round_trip(self):
        for spec in (
            ValiditySpec.workflow_lifetime(),
            ValiditySpec.wall_clock_ttl(7),
            ValiditySpec.exec_count(3),
        ):
            assert ValiditySpec.from_json(spec.to_json()) == spec

    def test_malformed_specs_rejected(self):
        with pytest.raises(ValueError):
            ValiditySpec.wall_clock_ttl(0)
        with pytest.raises(ValueError):
            ValiditySpec.exec_count(0)
        with pytest.raises(ValueError):
            ValiditySpec(mode=ValidityMode.WORKFLOW_LIFETIME, ttl=3)
