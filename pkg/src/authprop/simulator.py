"""Deterministic scenario harness and revocation-race experiment.

run_scenario turns a declarative Scenario into a live run: it seeds the
tuple store, executes the delegation plan (recording every mint and
attenuation), schedules revocation events, and drives the workflow engine.

Two engine modes exist. Compliant is the library behavior: delegation
rejections and binding failures fail closed. LegacyBuggy reproduces two
observed production failure classes for contrast:

  scope_widening_fallback  a vertex whose token binding fails is admitted
                           under a fabricated catalog-wide token
  nominal_delegation       a failed attenuation is reported as success and
                           the vertex silently acts under the parent token

Legacy behaviors live only behind this module; the library engine cannot be
configured into them. Traces from legacy runs are honest recordings of the
buggy decisions, which is exactly what lets the offline audit flag them.

The revocation-race harness quantifies the cache-coherence tradeoff: a
token is exercised at a fixed operation velocity, revoked mid-run, and the
post-revocation admissions are counted once under a wall-clock TTL cache
and once under an execution-count cache.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Iterable, Sequence

from .aggregation import AggregationPolicy
from .delegation import (
    AttenuationBlock,
    CoherenceState,
    DelegationToken,
    RevocationRegistry,
    ValiditySpec,
    check_validity,
    mint_root,
    attenuate,
)
from .errors import (
    ClockRegression,
    InvalidScenario,
    ScopeEscalation,
    ScopeExceedsInitiator,
    UnattestedSubject,
)
from .model import Action, Scope
from .scenario import EventSpec, Scenario
from .store import TupleStore
from .trace import TraceEvent, TraceHeader, WorkflowTrace
from .workflow import (
    ExecutionConfig,
    ExecutionResult,
    RevokePrincipalEvent,
    RevokeTokenEvent,
    RevokeTupleEvent,
    StoreEvent,
    TemporalPolicy,
    WorkflowExecution,
    _EngineQuirks,
)


class EngineMode(str, Enum):
    COMPLIANT = "compliant"
    LEGACY_BUGGY = "legacy"


@dataclass(frozen=True)
class RunMetrics:
    status: str
    records: int
    denials: int
    stale_cache_uses: int
    deliveries: int
    excluded: int

    def to_json(self) -> dict:
        return {
            "status": self.status,
            "records": self.records,
            "denials": self.denials,
            "stale_cache_uses": self.stale_cache_uses,
            "deliveries": self.deliveries,
            "excluded": self.excluded,
        }


def _metrics_from(result: ExecutionResult, trace: WorkflowTrace) -> RunMetrics:
    denials = 0
    stale = 0
    for record in trace.records:
        if record.event in (
            TraceEvent.ACCESS_DECIDED,
            TraceEvent.SYNTHESIS_DECIDED,
            TraceEvent.DELIVERY_DECIDED,
        ):
            if record.payload.get("decision") == "deny":
                denials += 1
        if record.event is TraceEvent.VALIDITY_CHECKED:
            if record.payload["decision"].get("stale_cache_used"):
                stale += 1
    return RunMetrics(
        status=result.status.value,
        records=len(trace.records),
        denials=denials,
        stale_cache_uses=stale,
        deliveries=len(result.delivered),
        excluded=len(result.excluded),
    )


def run_scenario(
    scenario: Scenario,
    mode: EngineMode = EngineMode.COMPLIANT,
    *,
    temporal_policy: TemporalPolicy | None = None,
) -> tuple[ExecutionResult, WorkflowTrace, RunMetrics]:
    """Execute a scenario deterministically under the given engine mode.

    temporal_policy overrides the scenario's config when given; one of the
    two must supply a policy, since evaluation timing is always an explicit
    choice, never a default.
    """
    policy = temporal_policy if temporal_policy is not None else scenario.temporal_policy
    if policy is None:
        raise InvalidScenario(
            "no temporal policy: the scenario config omits it and no override was given",
            ("missing temporal_policy",),
        )
    catalog = scenario.catalog
    store = TupleStore(catalog=catalog)
    registry = RevocationRegistry()
    tuple_ids: dict[str, int] = {}
    for spec in scenario.tuples:
        tuple_ids[spec.label] = store.add(spec.tuple)

    t0 = max([0] + [step.at for step in scenario.delegation_plan])
    store.advance_to(t0)
    header = TraceHeader(
        workflow_id=scenario.graph.workflow_id,
        initiator=scenario.graph.initiator,
        temporal_policy=policy.value,
        catalog_digest=catalog.digest(),
        require_attestation=catalog.require_attestation,
        depth_limit=store.depth_limit,
    )
    trace = WorkflowTrace(header)
    trace.add(
        TraceEvent.INITIATED,
        t0,
        {
            "workflow_id": scenario.graph.workflow_id,
            "initiator": scenario.graph.initiator,
            "temporal_policy": policy.value,
            "on_deny": scenario.on_deny.value,
            "t0": t0,
            "catalog_digest": catalog.digest(),
            "scenario_id": scenario.scenario_id,
            "mode": mode.value,
        },
    )

    nominal_faults = {f.token for f in scenario.faults if f.kind == "nominal_delegation"}
    widen_faults = {f.vertex for f in scenario.faults if f.kind == "scope_widening_fallback"}

    tokens: dict[str, DelegationToken] = {}
    substituted: dict[str, DelegationToken] = {}
    failed_tokens: set[str] = set()
    for step in scenario.delegation_plan:
        if step.step == "mint":
            issuer = catalog.principal(step.issuer)
            try:
                token = mint_root(
                    issuer,
                    scenario.graph.workflow_id,
                    step.scope,
                    step.validity,
                    step.at,
                    store,
                    token_id=step.token_id,
                )
            except (ScopeExceedsInitiator, ClockRegression) as exc:
                trace.add(
                    TraceEvent.POLICY_VIOLATION,
                    step.at,
                    {
                        "kind": "delegation_rejected",
                        "token_id": step.token_id,
                        "detail": str(exc),
                    },
                )
                failed_tokens.add(step.token_id)
                continue
            tokens[step.token_id] = token
            trace.add(
                TraceEvent.TOKEN_MINTED,
                step.at,
                {
                    "token_id": step.token_id,
                    "issuer": step.issuer,
                    "scope": step.scope.to_json(),
                    "validity": step.validity.to_json(),
                    "token": token.to_json(),
                },
            )
            continue
        # attenuation step
        parent = tokens.get(step.parent)
        if parent is None:
            trace.add(
                TraceEvent.POLICY_VIOLATION,
                step.at,
                {
                    "kind": "delegation_rejected",
                    "token_id": step.token_id,
                    "detail": f"parent token {step.parent!r} is unavailable",
                },
            )
            failed_tokens.add(step.token_id)
            continue
        if step.token_id in nominal_faults:
            if mode is EngineMode.LEGACY_BUGGY:
                # The legacy engine reports the delegation as succeeded and
                # quietly keeps using the parent's token.
                substituted[step.token_id] = parent
                trace.add(
                    TraceEvent.ATTENUATED,
                    step.at,
                    {
                        "token_id": step.token_id,
                        "parent": step.parent,
                        "issuer": parent.current_subject,
                        "subject": step.subject,
                        "scope": step.scope.to_json(),
                        "validity": step.validity.to_json(),
                        "token": parent.to_json(),
                    },
                )
            else:
                trace.add(
                    TraceEvent.POLICY_VIOLATION,
                    step.at,
                    {
                        "kind": "delegation_failure",
                        "token_id": step.token_id,
                        "detail": "session binding could not be established; failing closed",
                    },
                )
                failed_tokens.add(step.token_id)
            continue
        subject = catalog.principal(step.subject)
        try:
            token = attenuate(
                parent,
                subject,
                step.scope,
                step.validity,
                step.at,
                catalog,
                token_id=step.token_id,
            )
        except (ScopeEscalation, UnattestedSubject, ClockRegression) as exc:
            trace.add(
                TraceEvent.POLICY_VIOLATION,
                step.at,
                {
                    "kind": "delegation_rejected",
                    "token_id": step.token_id,
                    "detail": str(exc),
                },
            )
            failed_tokens.add(step.token_id)
            continue
        tokens[step.token_id] = token
        trace.add(
            TraceEvent.ATTENUATED,
            step.at,
            {
                "token_id": step.token_id,
                "parent": step.parent,
                "issuer": parent.current_subject,
                "subject": step.subject,
                "scope": step.scope.to_json(),
                "validity": step.validity.to_json(),
                "token": token.to_json(),
            },
        )

    events: list[StoreEvent] = []
    event_specs = list(scenario.events)
    for fault in scenario.faults:
        # A stale-tuple race is just a revocation scheduled mid-run.
        if fault.kind == "stale_tuple_race":
            event_specs.append(EventSpec(kind="revoke_tuple", at=fault.at, target=fault.target))
    event_specs.sort(key=lambda e: e.at)
    for spec in event_specs:
        if spec.kind == "revoke_tuple":
            events.append(
                RevokeTupleEvent(tick=spec.at, tuple_id=tuple_ids[spec.target], label=spec.target)
            )
        elif spec.kind == "revoke_token":
            events.append(RevokeTokenEvent(tick=spec.at, token_id=spec.target))
        else:
            events.append(RevokePrincipalEvent(tick=spec.at, principal=spec.target))

    binding_failures = {
        v.vertex_id for v in scenario.graph.vertices if v.token_ref in failed_tokens
    }
    quirks = None
    if mode is EngineMode.LEGACY_BUGGY and (widen_faults or substituted):
        quirks = _EngineQuirks(
            widen_vertices=frozenset(widen_faults),
            substituted_tokens=substituted,
        )
    else:
        binding_failures |= set(widen_faults)

    execution = WorkflowExecution(
        scenario.graph,
        ExecutionConfig(temporal_policy=policy, on_deny=scenario.on_deny),
        store,
        tokens,
        registry,
        aggregation_policy=scenario.aggregation_policy,
        coherence=CoherenceState(),
        events=events,
        trace=trace,
        binding_failures=binding_failures,
        _quirks=quirks,
    )
    result, trace = execution.run()
    return result, trace, _metrics_from(result, trace)


# -- revocation-race experiment -----------------------------------------------


@dataclass(frozen=True)
class RevocationRaceConfig:
    """One operating point: ops velocity, both cache budgets, revoke tick."""

    velocity: int
    ttl: int
    exec_count: int
    revoke_at: int
    horizon: int

    def __post_init__(self) -> None:
        for name in ("velocity", "ttl", "exec_count", "horizon"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.revoke_at < 0:
            raise ValueError(f"revoke_at must be non-negative, got {self.revoke_at}")
        if self.revoke_at >= self.horizon:
            raise ValueError(
                f"revoke_at ({self.revoke_at}) must fall inside the horizon ({self.horizon})"
            )


@dataclass(frozen=True)
class RaceMetrics:
    velocity: int
    ttl: int
    exec_count: int
    revoke_at: int
    horizon: int
    total_ops: int
    unauthorized_ops_ttl: int
    unauthorized_ops_exec: int
    stale_flagged_ttl: int
    stale_flagged_exec: int
    first_denied_tick_ttl: int | None
    first_denied_tick_exec: int | None

    @property
    def ratio(self) -> Fraction | None:
        """TTL-cache admissions per exec-count admission; None when the
        exec lane admitted nothing post-revocation."""
        if self.unauthorized_ops_exec == 0:
            return None
        return Fraction(self.unauthorized_ops_ttl, self.unauthorized_ops_exec)

    def to_json(self) -> dict:
        ratio = self.ratio
        return {
            "velocity": self.velocity,
            "ttl": self.ttl,
            "exec_count": self.exec_count,
            "revoke_at": self.revoke_at,
            "horizon": self.horizon,
            "total_ops": self.total_ops,
            "unauthorized_ops_ttl": self.unauthorized_ops_ttl,
            "unauthorized_ops_exec": self.unauthorized_ops_exec,
            "ratio": None if ratio is None else float(ratio),
            "stale_flagged_ttl": self.stale_flagged_ttl,
            "stale_flagged_exec": self.stale_flagged_exec,
            "first_denied_tick_ttl": self.first_denied_tick_ttl,
            "first_denied_tick_exec": self.first_denied_tick_exec,
        }


def _race_token(validity: ValiditySpec) -> DelegationToken:
    block = AttenuationBlock(
        seq=0,
        issuer="race-agent",
        subject="race-agent",
        scope=Scope.of(("race-resource", Action.READ)),
        validity=validity,
        issued_at=0,
    )
    return DelegationToken(token_id="tok-race", workflow_id="wf-race", blocks=(block,))


def _run_lane(
    validity: ValiditySpec, config: RevocationRaceConfig
) -> tuple[int, int, int | None]:
    """Drive one validity mode through the race; returns (admitted after
    revocation, stale-cache flags, first denied tick)."""
    token = _race_token(validity)
    registry = RevocationRegistry()
    coherence = CoherenceState()
    admitted_after = 0
    stale = 0
    first_denied: int | None = None
    for tick in range(config.horizon):
        if tick == config.revoke_at:
            registry.revoke_token(token.token_id, tick)
        for _op in range(config.velocity):
            result = check_validity(token, "race-agent", tick, registry, coherence)
            if result.valid and tick >= config.revoke_at:
                admitted_after += 1
            if result.stale_cache_used:
                stale += 1
            if not result.valid and first_denied is None:
                first_denied = tick
    return admitted_after, stale, first_denied


def revocation_race(config: RevocationRaceConfig) -> RaceMetrics:
    """Run the TTL lane and the exec-count lane at one operating point.

    Both lanes share the schedule: the holder issues velocity operations per
    tick from tick 0, the token is revoked at the boundary entering
    revoke_at, and the run stops at the horizon. The first operation of
    tick 0 always consults, so the last pre-revocation check sits at tick 0.
    """
    ttl_admitted, ttl_stale, ttl_denied = _run_lane(
        ValiditySpec.wall_clock_ttl(config.ttl), config
    )
    exec_admitted, exec_stale, exec_denied = _run_lane(
        ValiditySpec.exec_count(config.exec_count), config
    )
    return RaceMetrics(
        velocity=config.velocity,
        ttl=config.ttl,
        exec_count=config.exec_count,
        revoke_at=config.revoke_at,
        horizon=config.horizon,
        total_ops=config.velocity * config.horizon,
        unauthorized_ops_ttl=ttl_admitted,
        unauthorized_ops_exec=exec_admitted,
        stale_flagged_ttl=ttl_stale,
        stale_flagged_exec=exec_stale,
        first_denied_tick_ttl=ttl_denied,
        first_denied_tick_exec=exec_denied,
    )


def sweep(configs: Iterable[RevocationRaceConfig]) -> list[RaceMetrics]:
    """One RaceMetrics row per config; rows are independent and deterministic."""
    return [revocation_race(config) for config in configs]


RACE_CSV_COLUMNS = (
    "velocity",
    "ttl",
    "exec_count",
    "revoke_at",
    "horizon",
    "total_ops",
    "unauthorized_ops_ttl",
    "unauthorized_ops_exec",
    "ratio",
    "stale_flagged_ttl",
    "stale_flagged_exec",
    "first_denied_tick_ttl",
    "first_denied_tick_exec",
)


def race_csv(rows: Sequence[RaceMetrics]) -> str:
    """Render sweep rows as CSV text with a fixed column order."""
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=RACE_CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        data = row.to_json()
        writer.writerow({col: data[col] for col in RACE_CSV_COLUMNS})
    return buffer.getvalue()
