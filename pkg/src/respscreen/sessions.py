"""Submission persistence and deployment analytics.

The store is append-only newline-delimited JSON with an explicit schema
version; every line is one SubmissionRecord plus a receipt token, which
makes appends idempotent and replay into analytics trivial. Device ids
are opaque client-side hashes; the schema has no personal-data fields
beyond the optional device model.
"""

from __future__ import annotations

import csv
import json
import threading
import uuid
import warnings
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .errors import SchemaError, StorageError, UndefinedMetricError
from .screening import GateDecision, Verdict

SCHEMA_VERSION = 1
RERECORD_WINDOW = timedelta(minutes=20)

RECORDING_KINDS = ("cough", "breath", "voice")
STATUS_VALUES = ("yes", "no", "unanswered")

_RECORD_FIELDS = {
    "device_id", "timestamp", "recording_kind", "gate", "verdict",
    "self_reported_status", "device_model",
}


@dataclass(frozen=True)
class SubmissionRecord:
    device_id: str
    timestamp: datetime
    recording_kind: str
    gate: Optional[GateDecision] = None
    verdict: Optional[Verdict] = None
    self_reported_status: str = "unanswered"
    device_model: Optional[str] = None

    def __post_init__(self):
        if self.recording_kind not in RECORDING_KINDS:
            raise SchemaError(f"unknown recording kind {self.recording_kind!r}")
        if self.self_reported_status not in STATUS_VALUES:
            raise SchemaError(
                f"unknown self-reported status {self.self_reported_status!r}")
        if self.timestamp.tzinfo is None:
            raise SchemaError("timestamps must be timezone-aware (UTC)")

    def to_json(self) -> dict:
        doc = {
            "device_id": self.device_id,
            "timestamp": self.timestamp.astimezone(timezone.utc).isoformat(),
            "recording_kind": self.recording_kind,
            "self_reported_status": self.self_reported_status,
        }
        if self.gate is not None:
            doc["gate"] = {"score": self.gate.score, "accepted": self.gate.accepted,
                           "threshold": self.gate.threshold,
                           "reason": self.gate.reason}
        if self.verdict is not None:
            doc["verdict"] = {"probability": self.verdict.probability,
                              "band": self.verdict.band,
                              "disclaimer": self.verdict.disclaimer}
        if self.device_model is not None:
            doc["device_model"] = self.device_model
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "SubmissionRecord":
        unknown = set(doc) - _RECORD_FIELDS
        if unknown:
            raise SchemaError(f"unknown record fields {sorted(unknown)}")
        missing = {"device_id", "timestamp", "recording_kind"} - set(doc)
        if missing:
            raise SchemaError(f"record missing fields {sorted(missing)}")
        gate = None
        if doc.get("gate") is not None:
            g = doc["gate"]
            gate = GateDecision(score=float(g["score"]), accepted=bool(g["accepted"]),
                                threshold=float(g["threshold"]),
                                reason=g.get("reason"))
        verdict = None
        if doc.get("verdict") is not None:
            v = doc["verdict"]
            verdict = Verdict(probability=float(v["probability"]), band=v["band"],
                              disclaimer=v["disclaimer"])
        return cls(
            device_id=str(doc["device_id"]),
            timestamp=datetime.fromisoformat(doc["timestamp"]),
            recording_kind=doc["recording_kind"],
            gate=gate,
            verdict=verdict,
            self_reported_status=doc.get("self_reported_status", "unanswered"),
            device_model=doc.get("device_model"),
        )


class SubmissionStore:
    """Append-only NDJSON store; appends are atomic per line and idempotent
    on the receipt token. Safe for concurrent appenders in one process."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._tokens: set = set()
        if self.path.exists():
            for record, token in self._iter_lines():
                self._tokens.add(token)

    def _iter_lines(self) -> Iterator[tuple]:
        try:
            text = self.path.read_text()
        except OSError as exc:
            raise StorageError(f"cannot read store {self.path}: {exc}") from exc
        for ln, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise StorageError(f"{self.path}:{ln}: corrupt line: {exc}") from exc
            if doc.get("schema") != SCHEMA_VERSION:
                raise StorageError(
                    f"{self.path}:{ln}: unsupported schema {doc.get('schema')!r}")
            yield SubmissionRecord.from_json(doc["record"]), doc["token"]

    def append(self, record: SubmissionRecord, token: Optional[str] = None) -> str:
        """Durably append one record; re-appending an existing token is a
        no-op returning the same receipt."""
        token = token or uuid.uuid4().hex
        line = json.dumps({"schema": SCHEMA_VERSION, "token": token,
                           "record": record.to_json()})
        with self._lock:
            if token in self._tokens:
                return token
            try:
                with self.path.open("a") as fh:
                    fh.write(line + "\n")
                    fh.flush()
            except OSError as exc:
                raise StorageError(f"append to {self.path} failed: {exc}") from exc
            self._tokens.add(token)
        return token

    def read_all(self) -> list:
        """Immutable snapshot of all records in append order."""
        if not self.path.exists():
            return []
        with self._lock:
            return [record for record, _ in self._iter_lines()]


# ---------------------------------------------------------------------------
# Re-recording analytics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RerecordingSequence:
    """Two or more recordings by one device, starting at a rejection, with
    gaps of at most the window; successful iff the last one was accepted."""

    device_id: str
    records: tuple
    outcome: str  # "successful" | "unsuccessful"


@dataclass(frozen=True)
class RerecordingReport:
    sequences: tuple
    rejected_count: int
    rerecorded_fraction: Optional[float]
    success_fraction: Optional[float]


def rerecording_analysis(log: Sequence[SubmissionRecord],
                         window: timedelta = RERECORD_WINDOW) -> RerecordingReport:
    """Chronological per-device scan of gated recordings.

    A sequence opens at a rejected recording whose successor follows within
    the window of it, extends while consecutive gaps stay within the
    window, and closes on the first accepted recording (successful) or
    when the window expires after a rejection (unsuccessful). The
    re-recorded fraction counts rejected recordings followed by another
    recording of the same device within the window of that rejection.
    """
    per_device: dict = {}
    for rec in log:
        if rec.gate is not None:
            per_device.setdefault(rec.device_id, []).append(rec)

    sequences = []
    rejected_count = 0
    rerecorded = 0
    for device_id in sorted(per_device):
        recs = sorted(per_device[device_id], key=lambda r: r.timestamp)
        for idx, rec in enumerate(recs):
            if not rec.gate.accepted:
                rejected_count += 1
                if (idx + 1 < len(recs)
                        and recs[idx + 1].timestamp - rec.timestamp <= window):
                    rerecorded += 1
        i = 0
        while i < len(recs):
            rec = recs[i]
            if rec.gate.accepted:
                i += 1
                continue
            j = i
            while (j + 1 < len(recs)
                   and recs[j + 1].timestamp - recs[j].timestamp <= window):
                j += 1
                if recs[j].gate.accepted:
                    break
            if j > i:
                chain = tuple(recs[i:j + 1])
                outcome = ("successful" if chain[-1].gate.accepted
                           else "unsuccessful")
                sequences.append(RerecordingSequence(
                    device_id=device_id, records=chain, outcome=outcome))
            i = j + 1

    n_seq = len(sequences)
    return RerecordingReport(
        sequences=tuple(sequences),
        rejected_count=rejected_count,
        rerecorded_fraction=(rerecorded / rejected_count if rejected_count else None),
        success_fraction=(
            sum(1 for s in sequences if s.outcome == "successful") / n_seq
            if n_seq else None),
    )


def rejection_rate(log: Sequence[SubmissionRecord]) -> float:
    """Rejected gated recordings over all gated recordings."""
    gated = [rec for rec in log if rec.gate is not None]
    if not gated:
        raise UndefinedMetricError("rejection rate of an empty gated log")
    return sum(1 for rec in gated if not rec.gate.accepted) / len(gated)


# ---------------------------------------------------------------------------
# Dataset manifests and group-balanced sampling
# ---------------------------------------------------------------------------

MANIFEST_COLUMNS = ("path", "label", "dataset", "sample_rate_class",
                    "device_class", "verified")


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: int
    dataset: str
    sample_rate_class: str
    device_class: str
    verified: bool

    @property
    def group(self) -> tuple:
        return (self.dataset, self.sample_rate_class, self.device_class)


def _entry_from_row(row: dict, where: str) -> ManifestEntry:
    missing = set(MANIFEST_COLUMNS) - set(row)
    if missing:
        raise SchemaError(f"{where}: missing columns {sorted(missing)}")
    label = str(row["label"]).strip()
    if label not in ("0", "1"):
        raise SchemaError(f"{where}: label must be 0 or 1, got {row['label']!r}")
    verified = str(row["verified"]).strip().lower()
    if verified not in ("true", "false", "0", "1"):
        raise SchemaError(f"{where}: verified must be boolean, got {row['verified']!r}")
    return ManifestEntry(
        path=str(row["path"]), label=int(label), dataset=str(row["dataset"]),
        sample_rate_class=str(row["sample_rate_class"]),
        device_class=str(row["device_class"]),
        verified=verified in ("true", "1"),
    )


def load_manifest(path) -> list:
    """Read a CSV or JSON manifest; duplicate paths are rejected."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SchemaError(f"cannot read manifest {path}: {exc}") from exc
    entries = []
    if path.suffix.lower() == ".json":
        rows = json.loads(text)
        if not isinstance(rows, list):
            raise SchemaError(f"{path}: JSON manifest must be a list of objects")
        for i, row in enumerate(rows):
            entries.append(_entry_from_row(row, f"{path}[{i}]"))
    else:
        reader = csv.DictReader(text.splitlines())
        header = set(reader.fieldnames or [])
        missing = set(MANIFEST_COLUMNS) - header
        if missing:
            raise SchemaError(f"{path}: missing columns {sorted(missing)}")
        for ln, row in enumerate(reader, start=2):
            entries.append(_entry_from_row(row, f"{path}:{ln}"))
    seen: dict = {}
    for e in entries:
        if e.path in seen:
            raise SchemaError(f"duplicate manifest path {e.path!r}")
        seen[e.path] = e
    return entries


def balanced_sampler(entries: Sequence[ManifestEntry], seed: int = 0,
                     strict: bool = False) -> Iterator[ManifestEntry]:
    """Infinite deterministic stream with equal positive/negative draw
    rates within each group; groups are drawn proportionally to size.

    Groups holding a single class are excluded with a warning (or raise
    when `strict`).
    """
    groups: dict = {}
    for e in entries:
        groups.setdefault(e.group, {0: [], 1: []})[e.label].append(e)
    usable = {}
    sizes = []
    for key in sorted(groups):
        split = groups[key]
        if not split[0] or not split[1]:
            msg = f"group {key!r} holds a single class; excluded from sampling"
            if strict:
                raise ValueError(msg)
            warnings.warn(msg, stacklevel=2)
            continue
        usable[key] = split
        sizes.append(len(split[0]) + len(split[1]))
    if not usable:
        raise ValueError("no group holds both classes")
    keys = list(usable)
    p_group = np.asarray(sizes, dtype=np.float64) / sum(sizes)
    rng = np.random.default_rng(seed)

    def stream() -> Iterator[ManifestEntry]:
        while True:
            key = keys[rng.choice(len(keys), p=p_group)]
            label = int(rng.integers(0, 2))
            pool = usable[key][label]
            yield pool[rng.integers(0, len(pool))]

    return stream()
