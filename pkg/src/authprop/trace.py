"""Tamper-evident workflow traces: hash-chained records and file round-trip.

Each record's digest is sha256(prev_digest_bytes || canonical_body) where
the canonical body is compact sorted-key JSON over (seq, tick, event,
payload). The genesis record chains from a zero constant. The trace file is
length-prefixed canonical records behind a header, closed by a whole-file
digest trailer so header bytes are tamper-evident too. A JSON export exists
for human inspection; it is lossy for hashing and marked as such.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping

from .errors import BrokenTrace, SequenceGap

GENESIS_DIGEST = "0" * 64
DIGEST_ALGO = "sha256"
FILE_MAGIC = b"APTRACE1"
FORMAT_VERSION = 1


class TraceEvent(str, Enum):
    INITIATED = "initiated"
    TOKEN_MINTED = "token_minted"
    ATTENUATED = "attenuated"
    VALIDITY_CHECKED = "validity_checked"
    ACCESS_DECIDED = "access_decided"
    ARTIFACT_PRODUCED = "artifact_produced"
    SYNTHESIS_DECIDED = "synthesis_decided"
    DELIVERY_DECIDED = "delivery_decided"
    DELIVERED = "delivered"
    REVOCATION_OBSERVED = "revocation_observed"
    POLICY_VIOLATION = "policy_violation"


def canonical_json(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode(
        "utf-8"
    )


def canonical_body(seq: int, tick: int, event: TraceEvent, payload: Mapping) -> bytes:
    return canonical_json(
        {"seq": seq, "tick": tick, "event": event.value, "payload": payload}
    )


def chain_digest(prev_digest: str, body: bytes) -> str:
    return hashlib.sha256(bytes.fromhex(prev_digest) + body).hexdigest()


@dataclass(frozen=True)
class TraceRecord:
    seq: int
    tick: int
    event: TraceEvent
    payload: Mapping
    prev_digest: str
    digest: str

    def to_json(self) -> dict:
        return {
            "seq": self.seq,
            "tick": self.tick,
            "event": self.event.value,
            "payload": self.payload,
            "prev_digest": self.prev_digest,
            "digest": self.digest,
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "TraceRecord":
        return cls(
            seq=data["seq"],
            tick=data["tick"],
            event=TraceEvent(data["event"]),
            payload=data["payload"],
            prev_digest=data["prev_digest"],
            digest=data["digest"],
        )


@dataclass(frozen=True)
class TraceHeader:
    workflow_id: str
    initiator: str
    temporal_policy: str
    catalog_digest: str
    require_attestation: bool = False
    depth_limit: int = 8
    digest_algo: str = DIGEST_ALGO
    format_version: int = FORMAT_VERSION

    def to_json(self) -> dict:
        return {
            "workflow_id": self.workflow_id,
            "initiator": self.initiator,
            "temporal_policy": self.temporal_policy,
            "catalog_digest": self.catalog_digest,
            "require_attestation": self.require_attestation,
            "depth_limit": self.depth_limit,
            "digest_algo": self.digest_algo,
            "format_version": self.format_version,
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "TraceHeader":
        return cls(
            workflow_id=data["workflow_id"],
            initiator=data["initiator"],
            temporal_policy=data["temporal_policy"],
            catalog_digest=data["catalog_digest"],
            require_attestation=bool(data.get("require_attestation", False)),
            depth_limit=data.get("depth_limit", 8),
            digest_algo=data.get("digest_algo", DIGEST_ALGO),
            format_version=data.get("format_version", FORMAT_VERSION),
        )


@dataclass(frozen=True)
class IntegrityVerdict:
    intact: bool
    broken_at: int | None = None
    reason: str | None = None


class WorkflowTrace:
    """Header plus the append-only, hash-chained record list."""

    def __init__(self, header: TraceHeader, records: Iterable[TraceRecord] = ()) -> None:
        self.header = header
        self._records: list[TraceRecord] = list(records)

    def __len__(self) -> int:
        return len(self._records)

    @property
    def records(self) -> tuple[TraceRecord, ...]:
        return tuple(self._records)

    def record(self, seq: int) -> TraceRecord:
        return self._records[seq]

    @property
    def last_digest(self) -> str:
        return self._records[-1].digest if self._records else GENESIS_DIGEST

    def append_record(self, seq: int, tick: int, event: TraceEvent, payload: Mapping) -> TraceRecord:
        """Append with an explicit sequence number, enforcing contiguity."""
        expected = len(self._records)
        if seq != expected:
            raise SequenceGap(f"expected seq {expected}, got {seq}")
        body = canonical_body(seq, tick, event, payload)
        prev = self.last_digest
        record = TraceRecord(
            seq=seq,
            tick=tick,
            event=event,
            payload=payload,
            prev_digest=prev,
            digest=chain_digest(prev, body),
        )
        self._records.append(record)
        return record

    def add(self, event: TraceEvent, tick: int, payload: Mapping) -> TraceRecord:
        return self.append_record(len(self._records), tick, event, payload)


def verify_integrity(trace: WorkflowTrace) -> IntegrityVerdict:
    """Recompute the digest chain; report the first broken record."""
    prev = GENESIS_DIGEST
    for i, record in enumerate(trace.records):
        if record.seq != i:
            return IntegrityVerdict(False, i, "sequence_gap")
        if record.prev_digest != prev:
            return IntegrityVerdict(False, i, "previous_digest_mismatch")
        body = canonical_body(record.seq, record.tick, record.event, record.payload)
        if chain_digest(prev, body) != record.digest:
            return IntegrityVerdict(False, i, "digest_mismatch")
        prev = record.digest
    return IntegrityVerdict(True)


def _frame(blob: bytes) -> bytes:
    return struct.pack(">I", len(blob)) + blob


def trace_to_bytes(trace: WorkflowTrace) -> bytes:
    """Serialize to the canonical binary form. Byte-identical across runs."""
    out = bytearray()
    out += FILE_MAGIC
    out += _frame(canonical_json(trace.header.to_json()))
    for record in trace.records:
        out += _frame(canonical_json(record.to_json()))
    out += hashlib.sha256(bytes(out)).digest()
    return bytes(out)


def write_trace(trace: WorkflowTrace, path) -> None:
    with open(path, "wb") as fh:
        fh.write(trace_to_bytes(trace))


def trace_from_bytes(blob: bytes) -> WorkflowTrace:
    """Parse and verify the binary form.

    Raises BrokenTrace on bad framing, a failed whole-file digest, or a
    failed record chain, so any single-byte mutation surfaces as breakage.
    """
    if len(blob) < len(FILE_MAGIC) + 32 or blob[: len(FILE_MAGIC)] != FILE_MAGIC:
        raise BrokenTrace("not a trace file: bad magic or truncated")
    body, trailer = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != trailer:
        raise BrokenTrace("whole-file digest mismatch")
    pos = len(FILE_MAGIC)

    def take() -> bytes:
        nonlocal pos
        if pos + 4 > len(body):
            raise BrokenTrace("truncated frame length")
        (n,) = struct.unpack(">I", body[pos : pos + 4])
        pos += 4
        if pos + n > len(body):
            raise BrokenTrace("truncated frame body")
        out = body[pos : pos + n]
        pos += n
        return out

    try:
        header = TraceHeader.from_json(json.loads(take()))
        records = []
        while pos < len(body):
            records.append(TraceRecord.from_json(json.loads(take())))
    except BrokenTrace:
        raise
    except Exception as exc:
        raise BrokenTrace(f"malformed trace content: {exc}") from exc
    trace = WorkflowTrace(header, records)
    verdict = verify_integrity(trace)
    if not verdict.intact:
        raise BrokenTrace(f"record chain broken at seq {verdict.broken_at}: {verdict.reason}")
    return trace


def read_trace(path) -> WorkflowTrace:
    with open(path, "rb") as fh:
        return trace_from_bytes(fh.read())


def export_json(trace: WorkflowTrace) -> dict:
    """Human-readable export. Not canonical: unusable for hash verification."""
    return {
        "lossy_for_hashing": True,
        "note": "pretty export; digests verify only against the binary trace form",
        "header": trace.header.to_json(),
        "records": [r.to_json() for r in trace.records],
    }
