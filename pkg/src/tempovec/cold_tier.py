"""Cold tier: append-only, event-sourced history of every chunk version.

The commit log (``commits.log``) is a sequence of CRC frames, one per
transaction. Folding the log in order yields every record ever inserted
together with its validity interval ``[valid_from, valid_to)``. Point-in-time
and version-addressed snapshots are filters over that fold.

Transactions can be hidden from readers in two ways: a compensation marker
later in the log, or an externally supplied set of uncommitted versions
(transactions whose cross-tier write has not finished).
"""

from __future__ import annotations

import threading
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .embedding import check_vector
from .framing import CorruptLogError, FrameFile, decode, encode

NO_END = np.iinfo(np.int64).max


class ColdTierError(Exception):
    pass


class StaleReferenceError(ColdTierError):
    """An event referenced a record that is not active."""


class Status(str, Enum):
    ACTIVE = "active"
    SUPERSEDED = "superseded"
    DELETED = "deleted"


class ChangeType(str, Enum):
    INSERT = "insert"
    UPDATE = "update"
    DELETE = "delete"


@dataclass(frozen=True)
class ColdRecord:
    chunk_id: str
    embedding: np.ndarray = field(repr=False, compare=False)
    doc_id: str
    position: int
    valid_from: int
    content: str
    valid_to: int | None = None
    status: Status = Status.ACTIVE
    version_number: int = 1
    parent_hash: str | None = None
    change_type: ChangeType = ChangeType.INSERT

    @property
    def key(self) -> tuple[str, int]:
        return (self.doc_id, self.position)

    def identity(self) -> tuple:
        """Comparable tuple of every field except the embedding."""
        return (
            self.doc_id, self.position, self.chunk_id, self.valid_from, self.valid_to,
            Status(self.status).value, self.version_number, self.parent_hash,
            ChangeType(self.change_type).value, self.content,
        )


@dataclass(frozen=True)
class InsertEvent:
    record: ColdRecord


@dataclass(frozen=True)
class SupersedeEvent:
    doc_id: str
    position: int
    old_chunk_id: str
    valid_to: int


@dataclass(frozen=True)
class DeleteEvent:
    doc_id: str
    position: int
    old_chunk_id: str
    valid_to: int


@dataclass(frozen=True)
class CompensateEvent:
    target_version: int


Event = InsertEvent | SupersedeEvent | DeleteEvent | CompensateEvent


@dataclass(frozen=True)
class Transaction:
    txn_version: int
    commit_ts: int
    events: tuple[Event, ...]
    wal_id: int | None = None
    offset: int = -1


@dataclass
class SnapshotView:
    as_of_ts: int | None
    records: list[ColdRecord]
    embeddings: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.records)

    def keys(self) -> set[tuple[str, int, str]]:
        return {(r.doc_id, r.position, r.chunk_id) for r in self.records}


@dataclass(frozen=True)
class ColdStats:
    total_records: int
    active_records: int
    superseded: int
    deleted: int
    txn_count: int
    bytes_on_disk: int
    chunk_versions: int


@dataclass(frozen=True)
class TimelineEntry:
    version_number: int
    txn_version: int
    commit_ts: int
    inserts: int
    updates: int
    moves: int
    deletes: int

    @property
    def total_chunks_touched(self) -> int:
        return self.inserts + self.updates + self.moves + self.deletes


# -- payload encoding ---------------------------------------------------------

def _event_to_obj(ev: Event) -> dict:
    if isinstance(ev, InsertEvent):
        r = ev.record
        return {
            "t": "ins", "chunk_id": r.chunk_id, "doc_id": r.doc_id, "position": r.position,
            "valid_from": r.valid_from, "content": r.content,
            "version_number": r.version_number, "parent_hash": r.parent_hash,
            "change_type": ChangeType(r.change_type).value,
            "embedding": np.asarray(r.embedding, dtype=np.float32),
        }
    if isinstance(ev, SupersedeEvent):
        return {"t": "sup", "doc_id": ev.doc_id, "position": ev.position,
                "old_chunk_id": ev.old_chunk_id, "valid_to": ev.valid_to}
    if isinstance(ev, DeleteEvent):
        return {"t": "del", "doc_id": ev.doc_id, "position": ev.position,
                "old_chunk_id": ev.old_chunk_id, "valid_to": ev.valid_to}
    if isinstance(ev, CompensateEvent):
        return {"t": "cmp", "target": ev.target_version}
    raise TypeError(f"unknown event {ev!r}")


def _event_from_obj(obj: dict) -> Event:
    t = obj["t"]
    if t == "ins":
        return InsertEvent(ColdRecord(
            obj["chunk_id"], obj["embedding"], obj["doc_id"], obj["position"], obj["valid_from"],
            obj["content"], None, Status.ACTIVE, obj["version_number"], obj["parent_hash"],
            ChangeType(obj["change_type"]),
        ))
    if t == "sup":
        return SupersedeEvent(obj["doc_id"], obj["position"], obj["old_chunk_id"], obj["valid_to"])
    if t == "del":
        return DeleteEvent(obj["doc_id"], obj["position"], obj["old_chunk_id"], obj["valid_to"])
    if t == "cmp":
        return CompensateEvent(obj["target"])
    raise ValueError(f"unknown event type {t!r}")


def encode_txn(txn: Transaction) -> bytes:
    return encode({
        "v": txn.txn_version, "ts": txn.commit_ts, "wal": txn.wal_id,
        "events": [_event_to_obj(e) for e in txn.events],
    })


def decode_txn(payload: bytes, offset: int = -1) -> Transaction:
    obj = decode(payload)
    return Transaction(
        obj["v"], obj["ts"], tuple(_event_from_obj(e) for e in obj["events"]), obj["wal"], offset
    )


# -- fold state ---------------------------------------------------------------

class _Fold:
    """Materialized result of folding visible transactions in order."""

    def __init__(self, dimension: int):
        self.dimension = dimension
        self.records: list[ColdRecord] = []
        self.insert_txn: list[int] = []
        self.close_txn: list[int] = []
        self.active: dict[tuple[str, int], int] = {}
        self._emb = np.zeros((256, dimension), dtype=np.float32)
        self._vf = np.zeros(256, dtype=np.int64)
        self._vt = np.full(256, NO_END, dtype=np.int64)
        self.doc_active: Counter[str] = Counter()
        self.chunk_versions = 0
        self.doc_txns: dict[str, list[int]] = defaultdict(list)

    def _grow(self) -> None:
        n = self._emb.shape[0] * 2
        emb = np.zeros((n, self.dimension), dtype=np.float32)
        emb[: self._emb.shape[0]] = self._emb
        vf = np.zeros(n, dtype=np.int64)
        vf[: self._vf.shape[0]] = self._vf
        vt = np.full(n, NO_END, dtype=np.int64)
        vt[: self._vt.shape[0]] = self._vt
        self._emb, self._vf, self._vt = emb, vf, vt

    @property
    def embeddings(self) -> np.ndarray:
        return self._emb[: len(self.records)]

    @property
    def valid_from(self) -> np.ndarray:
        return self._vf[: len(self.records)]

    @property
    def valid_to(self) -> np.ndarray:
        return self._vt[: len(self.records)]

    def check(self, txn: Transaction) -> None:
        """Raise if `txn` cannot apply on top of the current state."""
        active = dict(self.active)
        for ev in txn.events:
            if isinstance(ev, (SupersedeEvent, DeleteEvent)):
                idx = active.get((ev.doc_id, ev.position))
                if idx is None or self.records[idx].chunk_id != ev.old_chunk_id:
                    raise StaleReferenceError(
                        f"txn {txn.txn_version}: no active record {ev.old_chunk_id[:12]} "
                        f"at {ev.doc_id}:{ev.position}"
                    )
                if ev.valid_to != txn.commit_ts:
                    raise ColdTierError(f"txn {txn.txn_version}: valid_to must equal commit_ts")
                if not ev.valid_to > self.records[idx].valid_from:
                    raise ColdTierError(
                        f"txn {txn.txn_version}: valid_to {ev.valid_to} not after "
                        f"valid_from {self.records[idx].valid_from}"
                    )
                del active[(ev.doc_id, ev.position)]
            elif isinstance(ev, InsertEvent):
                r = ev.record
                if r.key in active:
                    raise StaleReferenceError(
                        f"txn {txn.txn_version}: {r.doc_id}:{r.position} already has an active record"
                    )
                if r.valid_from != txn.commit_ts:
                    raise ColdTierError(f"txn {txn.txn_version}: valid_from must equal commit_ts")
                if (r.parent_hash is not None) != (ChangeType(r.change_type) is ChangeType.UPDATE):
                    raise ColdTierError("parent_hash must be set exactly for update records")
                if ChangeType(r.change_type) is ChangeType.DELETE:
                    raise ColdTierError("insert events cannot carry change_type=delete")
                check_vector(r.embedding, self.dimension)
                active[r.key] = -1

    def apply(self, txn: Transaction) -> None:
        touched: set[str] = set()
        for ev in txn.events:
            if isinstance(ev, (SupersedeEvent, DeleteEvent)):
                idx = self.active.pop((ev.doc_id, ev.position))
                status = Status.SUPERSEDED if isinstance(ev, SupersedeEvent) else Status.DELETED
                self.records[idx] = replace(self.records[idx], valid_to=ev.valid_to, status=status)
                self.close_txn[idx] = txn.txn_version
                self._vt[idx] = ev.valid_to
                self.doc_active[ev.doc_id] -= 1
                touched.add(ev.doc_id)
            elif isinstance(ev, InsertEvent):
                idx = len(self.records)
                if idx >= self._emb.shape[0]:
                    self._grow()
                rec = replace(ev.record, embedding=np.asarray(ev.record.embedding, dtype=np.float32))
                self.records.append(rec)
                self.insert_txn.append(txn.txn_version)
                self.close_txn.append(-1)
                self._emb[idx] = rec.embedding
                self._vf[idx] = rec.valid_from
                self.active[rec.key] = idx
                self.doc_active[rec.doc_id] += 1
                touched.add(rec.doc_id)
        for doc in sorted(touched):
            self.doc_txns[doc].append(txn.txn_version)
            self.chunk_versions += self.doc_active[doc]


class ColdTier:
    def __init__(self, directory: str | Path, dimension: int, durable: bool = True, writable: bool = True):
        self.directory = Path(directory)
        self.dimension = dimension
        self.durable = durable
        self.writable = writable
        self._lock = threading.RLock()
        self._file = FrameFile(self.directory / "commits.log", durable, writable)
        self._txns: list[Transaction] = []
        self._end = 0
        self._uncommitted: frozenset[int] = frozenset()
        self._fold = _Fold(dimension)
        self._compensated: set[int] = set()
        self._applied: set[int] = set()
        self._applied_max = 0
        self.refresh()

    @property
    def log_path(self) -> Path:
        return self._file.path

    # -- loading -----------------------------------------------------------
    def refresh(self) -> None:
        """Pick up transactions appended since the last read."""
        with self._lock:
            if self._end == 0 and self.writable:
                frames = self._file.read_all()
                end = self._file.size()
            else:
                frames, end = self._file.read_from(self._end)
            for offset, payload in frames:
                try:
                    txn = decode_txn(payload, offset)
                except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
                    raise CorruptLogError(self.log_path, offset, f"undecodable transaction: {exc}") from exc
                expected = len(self._txns) + 1
                if txn.txn_version != expected:
                    raise CorruptLogError(
                        self.log_path, offset, f"txn_version {txn.txn_version}, expected {expected}"
                    )
                self._admit(txn)
            self._end = end

    def _admit(self, txn: Transaction) -> None:
        self._txns.append(txn)
        for ev in txn.events:
            if isinstance(ev, CompensateEvent):
                self._compensated.add(ev.target_version)
                if ev.target_version in self._applied:
                    self._rebuild()
                    return
        if self._visible(txn.txn_version):
            self._apply(txn)

    def _apply(self, txn: Transaction) -> None:
        self._fold.apply(txn)
        self._applied.add(txn.txn_version)
        self._applied_max = max(self._applied_max, txn.txn_version)

    def _visible(self, version: int) -> bool:
        return version not in self._compensated and version not in self._uncommitted

    def _rebuild(self) -> None:
        self._fold = _Fold(self.dimension)
        self._applied = set()
        self._applied_max = 0
        for txn in self._txns:
            if self._visible(txn.txn_version):
                self._apply(txn)

    def set_uncommitted(self, versions: Iterable[int]) -> None:
        """Hide these transaction versions from every read until cleared.

        Revealing transactions newer than everything already folded is
        incremental; any other change refolds the log.
        """
        new = frozenset(versions)
        with self._lock:
            if new == self._uncommitted:
                return
            hiding = new - self._uncommitted
            revealing = self._uncommitted - new
            self._uncommitted = new
            if hiding & self._applied or (revealing and min(revealing) < self._applied_max):
                self._rebuild()
                return
            for v in sorted(revealing):
                if v <= len(self._txns) and self._visible(v):
                    self._apply(self._txns[v - 1])

    @property
    def uncommitted(self) -> frozenset[int]:
        return self._uncommitted

    @property
    def compensated(self) -> frozenset[int]:
        return frozenset(self._compensated)

    # -- writes ------------------------------------------------------------
    def append(self, events: Sequence[Event], commit_ts: int, wal_id: int | None = None) -> int:
        """Durably append one transaction; returns its txn_version.

        The whole transaction is validated against the visible state first;
        any stale reference rejects it and leaves the log untouched.
        """
        if not self.writable:
            raise ColdTierError("cold tier opened read-only")
        with self._lock:
            if self._txns and commit_ts < self._txns[-1].commit_ts:
                raise ColdTierError(
                    f"commit_ts {commit_ts} precedes previous commit {self._txns[-1].commit_ts}"
                )
            txn = Transaction(len(self._txns) + 1, int(commit_ts), tuple(events), wal_id)
            data_events = [e for e in txn.events if not isinstance(e, CompensateEvent)]
            if data_events and len(data_events) != len(txn.events):
                raise ColdTierError("compensation markers travel in their own transaction")
            self._fold.check(txn)
            offset = self._file.append(encode_txn(txn))
            self._end = self._file.size()
            self._admit(replace(txn, offset=offset))
            return txn.txn_version

    def compensate(self, target_version: int, commit_ts: int | None = None) -> int:
        """Append a marker that permanently hides transaction `target_version`."""
        with self._lock:
            if not 1 <= target_version <= len(self._txns):
                raise ColdTierError(f"no transaction {target_version} to compensate")
            ts = max(commit_ts or 0, self._txns[-1].commit_ts)
            return self.append([CompensateEvent(target_version)], ts)

    # -- reads -------------------------------------------------------------
    @property
    def latest_version(self) -> int:
        return len(self._txns)

    @property
    def latest_commit_ts(self) -> int | None:
        return self._txns[-1].commit_ts if self._txns else None

    def transactions(self) -> list[Transaction]:
        with self._lock:
            return list(self._txns)

    def txn_for_wal(self, wal_id: int) -> Transaction | None:
        with self._lock:
            for txn in reversed(self._txns):
                if txn.wal_id == wal_id:
                    return txn
        return None

    def all_records(self) -> list[ColdRecord]:
        """Every visible record with its final validity, in insertion order."""
        with self._lock:
            return list(self._fold.records)

    def snapshot_as_of(self, target_ts: int) -> SnapshotView:
        """Records with ``valid_from <= target_ts < valid_to``."""
        with self._lock:
            f = self._fold
            mask = (f.valid_from <= target_ts) & (target_ts < f.valid_to)
            idx = np.flatnonzero(mask)
            return self._view(target_ts, idx)

    def snapshot_at_version(self, txn_version: int) -> SnapshotView:
        """Active records after folding the first `txn_version` transactions."""
        with self._lock:
            if not 0 <= txn_version <= len(self._txns):
                raise ColdTierError(f"version {txn_version} outside 0..{len(self._txns)}")
            f = self._fold
            ins = np.asarray(f.insert_txn, dtype=np.int64)
            close = np.asarray(f.close_txn, dtype=np.int64)
            mask = (ins <= txn_version) & ((close < 0) | (close > txn_version))
            idx = np.flatnonzero(mask)
            view = self._view(None, idx)
            # Records closed later are still active at this version.
            view.records = [
                r if r.valid_to is None else replace(r, valid_to=None, status=Status.ACTIVE)
                for r in view.records
            ]
            return view

    def _view(self, ts: int | None, idx: np.ndarray) -> SnapshotView:
        f = self._fold
        order = sorted(idx.tolist(), key=lambda i: (f.records[i].doc_id, f.records[i].position))
        return SnapshotView(ts, [f.records[i] for i in order], f.embeddings[order])

    def search_as_of(self, query: np.ndarray, target_ts: int, k: int) -> list[tuple[ColdRecord, float]]:
        """Exact top-k over the snapshot at `target_ts`.

        Validity filtering happens before any similarity is computed.
        """
        q = check_vector(query, self.dimension)
        with self._lock:
            f = self._fold
            idx = np.flatnonzero((f.valid_from <= target_ts) & (target_ts < f.valid_to))
            if idx.size == 0:
                return []
            sims = f.embeddings[idx] @ q
            recs = f.records
        if idx.size > k:
            # keep everything tied with the k-th best so tie-breaking stays exact
            keep = sims >= np.partition(sims, idx.size - k)[idx.size - k]
            idx, sims = idx[keep], sims[keep]
        cand = sorted(
            zip(idx.tolist(), sims.tolist()), key=lambda t: (-t[1], recs[t[0]].chunk_id, recs[t[0]].key)
        )
        return [(recs[i], s) for i, s in cand[:k]]

    def document_versions(self, doc_id: str) -> list[Transaction]:
        with self._lock:
            return [self._txns[v - 1] for v in self._fold.doc_txns.get(doc_id, [])]

    def document_state(self, doc_id: str, doc_version: int) -> list[ColdRecord]:
        """Active records of `doc_id` after its `doc_version`-th transaction, by position."""
        versions = self.document_versions(doc_id)
        if not 1 <= doc_version <= len(versions):
            raise ColdTierError(f"{doc_id}: no version {doc_version} (have {len(versions)})")
        view = self.snapshot_at_version(versions[doc_version - 1].txn_version)
        return [r for r in view.records if r.doc_id == doc_id]

    def document_timeline(self, doc_id: str) -> list[TimelineEntry]:
        out = []
        for n, txn in enumerate(self.document_versions(doc_id), start=1):
            ins = upd = mov = dele = 0
            closed = {}
            for ev in txn.events:
                if isinstance(ev, (SupersedeEvent, DeleteEvent)) and ev.doc_id == doc_id:
                    closed[(ev.position, ev.old_chunk_id)] = ev
                    if isinstance(ev, DeleteEvent):
                        dele += 1
                elif isinstance(ev, InsertEvent) and ev.record.doc_id == doc_id:
                    r = ev.record
                    if ChangeType(r.change_type) is ChangeType.INSERT:
                        ins += 1
                    elif r.parent_hash == r.chunk_id:
                        mov += 1
                    else:
                        upd += 1
            out.append(TimelineEntry(n, txn.txn_version, txn.commit_ts, ins, upd, mov, dele))
        return out

    def doc_ids(self) -> list[str]:
        with self._lock:
            return sorted(self._fold.doc_txns)

    def active_by_doc(self, doc_id: str) -> list[ColdRecord]:
        with self._lock:
            f = self._fold
            recs = [f.records[i] for (d, _), i in f.active.items() if d == doc_id]
        return sorted(recs, key=lambda r: r.position)

    def active_records(self) -> list[ColdRecord]:
        with self._lock:
            f = self._fold
            return sorted((f.records[i] for i in f.active.values()), key=lambda r: r.key)

    def stats(self) -> ColdStats:
        with self._lock:
            counts = Counter(Status(r.status) for r in self._fold.records)
            return ColdStats(
                total_records=len(self._fold.records),
                active_records=counts[Status.ACTIVE],
                superseded=counts[Status.SUPERSEDED],
                deleted=counts[Status.DELETED],
                txn_count=len(self._txns),
                bytes_on_disk=self._file.size(),
                chunk_versions=self._fold.chunk_versions,
            )

    def lineage(self, record: ColdRecord) -> list[ColdRecord]:
        """Walk parent_hash links back to the originating insert; newest first."""
        with self._lock:
            recs = self._fold.records
            chain = [record]
            cur = record
            while ChangeType(cur.change_type) is ChangeType.UPDATE:
                parents = [
                    r for r in recs
                    if r.doc_id == cur.doc_id and r.chunk_id == cur.parent_hash
                    and r.valid_to == cur.valid_from and r.version_number == cur.version_number - 1
                ]
                if not parents:
                    raise ColdTierError(f"broken lineage at {cur.doc_id}:{cur.position} v{cur.version_number}")
                cur = parents[0]
                chain.append(cur)
            return chain

    def close(self) -> None:
        self._file.close()
