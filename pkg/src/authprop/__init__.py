"""Workflow-scoped authorization: reference engine, audit toolkit, simulator.

The package answers one question in several forms: which principal may touch
which resource, on whose behalf, at which moment - and can a third party
verify the answer later from the trace alone?

Layers, bottom up:

* ``model``       - principals, resources, actions, scopes, catalogs
* ``store``       - time-versioned relationship tuples with point-in-time reads
* ``delegation``  - attenuation-only token chains, verification, validity caching
* ``aggregation`` - label-based combination rules over artifact provenance
* ``trace``       - hash-chained, byte-reproducible execution records
* ``workflow``    - the DAG engine that enforces all of the above
* ``audit``       - offline recomputation of every decision from the trace
* ``scenario``    - declarative JSON scenarios with schema validation
* ``simulator``   - compliant/legacy engines and the revocation-race experiment
"""

from .aggregation import (
    EMPTY_POLICY,
    AggregationPolicy,
    CombinationDecision,
    ContributionEntry,
    DenyCombinationRule,
    check_combination,
    check_labels,
    inspect_contributions,
    provenance_union,
)
from .audit import (
    AuditVerdict,
    AuditViolation,
    SubVerdict,
    TaintReport,
    TaintedDelivery,
    audit,
    audit_bytes,
    recompute_access_record,
    taint,
    taint_artifact,
)
from .delegation import (
    AttenuationBlock,
    ChainVerdict,
    CoherenceState,
    DelegationToken,
    EffectiveAuthority,
    RevocationRegistry,
    ValidityMode,
    ValidityResult,
    ValiditySpec,
    attenuate,
    check_validity,
    effective_authority,
    mint_root,
    subject_authority,
    verify_chain,
    verify_chain_with,
)
from .errors import (
    AuthPropError,
    BrokenTrace,
    ClockRegression,
    ForeignArtifact,
    InvalidGraph,
    InvalidScenario,
    NotAnAccessRecord,
    ScopeEscalation,
    ScopeExceedsInitiator,
    UnattestedSubject,
    UnboundToken,
    UnknownHolder,
    UnknownResource,
    UnknownSubject,
)
from .model import (
    Action,
    Catalog,
    Principal,
    PrincipalKind,
    Resource,
    Scope,
    catalog_validate,
)
from .scenario import (
    SCHEMA_VERSION,
    Scenario,
    load_scenario,
    parse_scenario,
    scenario_schema,
    validate_scenario,
)
from .simulator import (
    EngineMode,
    RaceMetrics,
    RevocationRaceConfig,
    RunMetrics,
    race_csv,
    revocation_race,
    run_scenario,
    sweep,
)
from .store import (
    AuthorizationTuple,
    DirectGrant,
    GroupGrant,
    MemberOf,
    TupleStore,
)
from .trace import (
    IntegrityVerdict,
    TraceEvent,
    TraceHeader,
    TraceRecord,
    WorkflowTrace,
    export_json,
    read_trace,
    trace_from_bytes,
    trace_to_bytes,
    verify_integrity,
    write_trace,
)
from .workflow import (
    ActionVertex,
    DagViolation,
    DataArtifact,
    Delivery,
    Disclosure,
    ExecutionConfig,
    ExecutionResult,
    ExecutionStatus,
    OnDeny,
    TemporalPolicy,
    VertexKind,
    WorkflowExecution,
    WorkflowGraph,
    execute,
    topological_order,
    validate_dag,
)

__version__ = "0.1.0"

__all__ = [
    "Action",
    "ActionVertex",
    "AggregationPolicy",
    "AttenuationBlock",
    "AuditVerdict",
    "AuditViolation",
    "AuthPropError",
    "AuthorizationTuple",
    "BrokenTrace",
    "Catalog",
    "ChainVerdict",
    "ClockRegression",
    "CoherenceState",
    "CombinationDecision",
    "ContributionEntry",
    "DagViolation",
    "DataArtifact",
    "DelegationToken",
    "Delivery",
    "DenyCombinationRule",
    "DirectGrant",
    "Disclosure",
    "EMPTY_POLICY",
    "EffectiveAuthority",
    "EngineMode",
    "ExecutionConfig",
    "ExecutionResult",
    "ExecutionStatus",
    "ForeignArtifact",
    "GroupGrant",
    "IntegrityVerdict",
    "InvalidGraph",
    "InvalidScenario",
    "MemberOf",
    "NotAnAccessRecord",
    "OnDeny",
    "Principal",
    "PrincipalKind",
    "RaceMetrics",
    "Resource",
    "RevocationRaceConfig",
    "RevocationRegistry",
    "RunMetrics",
    "SCHEMA_VERSION",
    "Scenario",
    "Scope",
    "ScopeEscalation",
    "ScopeExceedsInitiator",
    "SubVerdict",
    "TaintReport",
    "TaintedDelivery",
    "TemporalPolicy",
    "TraceEvent",
    "TraceHeader",
    "TraceRecord",
    "TupleStore",
    "UnattestedSubject",
    "UnboundToken",
    "UnknownHolder",
    "UnknownResource",
    "UnknownSubject",
    "ValidityMode",
    "ValidityResult",
    "ValiditySpec",
    "VertexKind",
    "WorkflowExecution",
    "WorkflowGraph",
    "WorkflowTrace",
    "audit",
    "audit_bytes",
    "attenuate",
    "catalog_validate",
    "check_combination",
    "check_labels",
    "check_validity",
    "effective_authority",
    "execute",
    "export_json",
    "inspect_contributions",
    "load_scenario",
    "mint_root",
    "parse_scenario",
    "provenance_union",
    "race_csv",
    "read_trace",
    "recompute_access_record",
    "revocation_race",
    "run_scenario",
    "scenario_schema",
    "subject_authority",
    "sweep",
    "taint",
    "taint_artifact",
    "topological_order",
    "trace_from_bytes",
    "trace_to_bytes",
    "validate_dag",
    "validate_scenario",
    "verify_chain",
    "verify_chain_with",
    "verify_integrity",
    "write_trace",
]
