"""Exception hierarchy shared across the engine.

Every error that callers are expected to handle derives from AuthPropError.
Validation problems that are data, not control flow (catalog violations,
graph violations, audit findings), are returned as values instead.
"""

from __future__ import annotations


class AuthPropError(Exception):
    """Base class for all errors raised by this package."""


class ClockRegression(AuthPropError):
    """A time-ordered operation was attempted against an earlier tick."""


class FutureTime(AuthPropError):
    """A snapshot or query referenced a tick beyond the store clock."""


class UnknownTuple(AuthPropError):
    """A tuple id does not resolve in the store."""


class AlreadyRevoked(AuthPropError):
    """The tuple already has a finalized validity end."""


class UnknownSubject(AuthPropError):
    """A principal id does not resolve in the catalog."""


class UnknownResource(AuthPropError):
    """A resource id does not resolve in the catalog."""


class ScopeExceedsInitiator(AuthPropError):
    """A root token requested grants the initiator cannot exercise."""

    def __init__(self, message: str, offending: tuple = ()):  # noqa: D107
        super().__init__(message)
        self.offending = tuple(offending)


class ScopeEscalation(AuthPropError):
    """An attenuation requested grants outside its parent block scope."""


class UnattestedSubject(AuthPropError):
    """Delegation to an agent without attestation where it is required."""


class InvalidChain(AuthPropError):
    """A delegation token failed chain verification."""


class UnknownHolder(AuthPropError):
    """A validity check named a holder that is not the token's subject."""


class InvalidGraph(AuthPropError):
    """A workflow graph failed structural validation."""

    def __init__(self, message: str, violations: tuple = ()):  # noqa: D107
        super().__init__(message)
        self.violations = tuple(violations)


class UnboundToken(AuthPropError):
    """A vertex token reference does not resolve or is not usable here."""


class TerminalExecution(AuthPropError):
    """step() was called on an execution that already finished."""


class SequenceGap(AuthPropError):
    """A trace append skipped or repeated a sequence number."""


class BrokenTrace(AuthPropError):
    """Trace bytes failed framing, digest, or chain verification."""


class NotAnAccessRecord(AuthPropError):
    """A taint origin did not reference an access decision record."""


class ForeignArtifact(AuthPropError):
    """An artifact was not produced by the given workflow graph."""


class InvalidScenario(AuthPropError):
    """A scenario file failed schema or cross-reference validation."""

    def __init__(self, message: str, diagnostics: tuple = ()):  # noqa: D107
        super().__init__(message)
        self.diagnostics = tuple(diagnostics)
