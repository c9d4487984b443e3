"""Cross-tier commits: write-ahead log, compensation, reconciliation.

Each dual write goes through four durable WAL states::

    pending -> cold_written -> committed
       \\            \\
        `-> compensated <-'

The cold tier is written first. A cold transaction stays hidden from
readers until its WAL entry reaches ``committed``; a compensated entry's
cold transaction is hidden for good by a marker appended to the commit log.
"""

from __future__ import annotations

import hashlib
import logging
import threading
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

from .change_detection import HashStore, HashStoreError
from .cold_tier import ColdRecord, ColdTier, ColdTierError, Event, encode_txn, Transaction
from .framing import FrameFile, decode, encode
from .hot_tier import Delete, HotMutation, HotRecord, HotTier, Insert

log = logging.getLogger(__name__)

MAX_HOT_RETRIES = 3


class WalState(str, Enum):
    PENDING = "pending"
    COLD_WRITTEN = "cold_written"
    COMMITTED = "committed"
    COMPENSATED = "compensated"


_LEGAL = {
    WalState.PENDING: {WalState.COLD_WRITTEN, WalState.COMPENSATED},
    WalState.COLD_WRITTEN: {WalState.COMMITTED, WalState.COMPENSATED},
    WalState.COMMITTED: set(),
    WalState.COMPENSATED: set(),
}


class TransactionError(Exception):
    def __init__(self, message: str, entry: "WalEntry | None" = None):
        super().__init__(message)
        self.entry = entry


class ColdWriteError(TransactionError):
    """The cold append failed; the entry was compensated and nothing is visible."""


class HotWriteError(TransactionError):
    """The hot tier rejected the batch; the entry waits in cold_written for reconcile."""


@dataclass(frozen=True)
class WalEntry:
    wal_id: int
    state: WalState
    cold_txn_version: int | None
    created_ts: int
    updated_ts: int
    payload_digest: str
    doc_ids: tuple[str, ...] = ()


def now_ms() -> int:
    return time.time_ns() // 1_000_000


class WriteAheadLog:
    """State transitions appended as frames to ``wal.log``; the last frame per id wins."""

    def __init__(self, path: str | Path, durable: bool = True, writable: bool = True):
        self._file = FrameFile(path, durable, writable)
        self._entries: dict[int, WalEntry] = {}
        self._end = 0
        self._lock = threading.Lock()
        self.refresh()

    @property
    def path(self) -> Path:
        return self._file.path

    def refresh(self) -> None:
        with self._lock:
            if self._end == 0 and self._file.writable:
                frames, self._end = self._file.read_all(), self._file.size()
            else:
                frames, self._end = self._file.read_from(self._end)
            for _, payload in frames:
                obj = decode(payload)
                self._entries[obj["id"]] = WalEntry(
                    obj["id"], WalState(obj["state"]), obj["cold"], obj["created"], obj["updated"],
                    obj["digest"], tuple(obj["docs"]),
                )

    def _write(self, entry: WalEntry) -> WalEntry:
        self._file.append(encode({
            "id": entry.wal_id, "state": entry.state.value, "cold": entry.cold_txn_version,
            "created": entry.created_ts, "updated": entry.updated_ts,
            "digest": entry.payload_digest, "docs": list(entry.doc_ids),
        }))
        self._end = self._file.size()
        self._entries[entry.wal_id] = entry
        return entry

    def begin(self, digest: str, doc_ids: Sequence[str]) -> WalEntry:
        with self._lock:
            wal_id = max(self._entries, default=0) + 1
            ts = now_ms()
            return self._write(WalEntry(wal_id, WalState.PENDING, None, ts, ts, digest, tuple(doc_ids)))

    def advance(self, wal_id: int, state: WalState, cold_txn_version: int | None = None) -> WalEntry:
        with self._lock:
            cur = self._entries[wal_id]
            if state not in _LEGAL[cur.state]:
                raise TransactionError(f"illegal WAL transition {cur.state.value} -> {state.value}", cur)
            version = cold_txn_version if cold_txn_version is not None else cur.cold_txn_version
            return self._write(replace(cur, state=state, cold_txn_version=version, updated_ts=now_ms()))

    def get(self, wal_id: int) -> WalEntry | None:
        return self._entries.get(wal_id)

    def entries(self) -> list[WalEntry]:
        with self._lock:
            return [self._entries[k] for k in sorted(self._entries)]

    def open_entries(self) -> list[WalEntry]:
        return [e for e in self.entries() if e.state in (WalState.PENDING, WalState.COLD_WRITTEN)]

    def close(self) -> None:
        self._file.close()


@dataclass
class ReconcileReport:
    repaired: int = 0
    compensated: int = 0
    failures: int = 0
    hash_store_fixed: int = 0


@dataclass
class DivergenceReport:
    only_hot: list[tuple[str, int, str]] = field(default_factory=list)
    only_cold: list[tuple[str, int, str]] = field(default_factory=list)

    @property
    def consistent(self) -> bool:
        return not self.only_hot and not self.only_cold

    def __len__(self) -> int:
        return len(self.only_hot) + len(self.only_cold)


def payload_digest(events: Sequence[Event]) -> str:
    return hashlib.sha256(encode_txn(Transaction(0, 0, tuple(events)))).hexdigest()


def hot_record(rec: ColdRecord) -> HotRecord:
    return HotRecord(rec.chunk_id, rec.embedding, rec.doc_id, rec.position, rec.valid_from, rec.content)


class TransactionManager:
    """Serializes dual-tier writes. One instance per writable store."""

    def __init__(self, cold: ColdTier, hot: HotTier, wal: WriteAheadLog, hashes: HashStore | None = None):
        self.cold = cold
        self.hot = hot
        self.wal = wal
        self.hashes = hashes
        self.max_retries = MAX_HOT_RETRIES
        # Called with a boundary name after each durable step; the crash harness exits there.
        self.crash_hook: Callable[[str], None] | None = None
        self._attempts: dict[int, int] = {}
        self._lock = threading.RLock()
        self.sync_visibility()

    def boundary(self, name: str) -> None:
        if self.crash_hook is not None:
            self.crash_hook(name)

    def sync_visibility(self) -> None:
        """Hide every cold transaction whose WAL entry is not committed."""
        hidden = set()
        for txn in self.cold.transactions():
            if txn.wal_id is None:
                continue
            entry = self.wal.get(txn.wal_id)
            if entry is None or entry.state is not WalState.COMMITTED:
                hidden.add(txn.txn_version)
        self.cold.set_uncommitted(hidden)

    def commit_dual(
        self,
        events: Sequence[Event],
        hot_mutations: Sequence[HotMutation],
        commit_ts: int,
        doc_ids: Sequence[str] = (),
    ) -> WalEntry:
        with self._lock:
            if self.wal.open_entries():
                self.reconcile()
                # New work must build on a settled log: at most one open entry, always the newest.
                if self.wal.open_entries():
                    raise TransactionError("an earlier transaction is still unresolved; retry later")
            entry = self.wal.begin(payload_digest(events), doc_ids)
            self.boundary("pending")

            hidden = set(self.cold.uncommitted)
            try:
                version = self.cold.latest_version + 1
                self.cold.set_uncommitted(hidden | {version})
                got = self.cold.append(events, commit_ts, wal_id=entry.wal_id)
                assert got == version
            except (ColdTierError, OSError, ValueError) as exc:
                self.cold.set_uncommitted(hidden)
                entry = self.wal.advance(entry.wal_id, WalState.COMPENSATED)
                raise ColdWriteError(f"cold append failed: {exc}", entry) from exc
            self.boundary("cold_appended")

            entry = self.wal.advance(entry.wal_id, WalState.COLD_WRITTEN, version)
            self.boundary("cold_written")

            try:
                self.hot.apply(list(hot_mutations))
            except Exception as exc:
                log.warning("hot tier write failed for wal %d: %s", entry.wal_id, exc)
                raise HotWriteError(f"hot tier write failed: {exc}", entry) from exc
            self.boundary("hot_applied")

            entry = self.wal.advance(entry.wal_id, WalState.COMMITTED)
            self.cold.set_uncommitted(self.cold.uncommitted - {version})
            self.boundary("committed")
            return entry

    def _sync_docs(self, doc_ids: Sequence[str]) -> None:
        """Make the hot tier hold exactly the visible cold active records of these docs."""
        want: dict[tuple[str, int], ColdRecord] = {}
        for doc in doc_ids:
            for rec in self.cold.active_by_doc(doc):
                want[rec.key] = rec
        docs = set(doc_ids)
        have = {r.key: r for r in self.hot.active_records() if r.doc_id in docs}
        muts: list[HotMutation] = []
        for key, rec in have.items():
            if key not in want or want[key].chunk_id != rec.chunk_id:
                muts.append(Delete(rec.chunk_id, rec.doc_id, rec.position))
        for key, rec in want.items():
            if key not in have or have[key].chunk_id != rec.chunk_id:
                muts.append(Insert(hot_record(rec)))
        if muts:
            self.hot.apply(muts)

    def _docs_of(self, entry: WalEntry) -> list[str]:
        if entry.doc_ids:
            return list(entry.doc_ids)
        txn = self.cold.txn_for_wal(entry.wal_id)
        docs = set()
        for ev in txn.events if txn else ():
            rec = getattr(ev, "record", None)
            docs.add(rec.doc_id if rec is not None else getattr(ev, "doc_id", None))
        docs.discard(None)
        return sorted(docs)

    def reconcile(self, stale_after_ms: int = 0) -> ReconcileReport:
        """Drive every open WAL entry to a terminal state.

        cold_written entries are retried against the hot tier and
        compensated after `max_retries` failures; pending entries are
        compensated. Hot state of affected documents is re-synced either way.
        """
        report = ReconcileReport()
        with self._lock:
            self.wal.refresh()
            self.cold.refresh()
            now = now_ms()
            for entry in self.wal.open_entries():
                if now - entry.updated_ts < stale_after_ms:
                    continue
                txn = self.cold.txn_for_wal(entry.wal_id)
                docs = self._docs_of(entry)
                if entry.state is WalState.COLD_WRITTEN and txn is not None:
                    hidden = set(self.cold.uncommitted)
                    try:
                        self.cold.set_uncommitted(hidden - {txn.txn_version})
                        self._sync_docs(docs)
                    except Exception as exc:
                        self.cold.set_uncommitted(hidden)
                        n = self._attempts.get(entry.wal_id, 0) + 1
                        self._attempts[entry.wal_id] = n
                        report.failures += 1
                        log.warning("reconcile retry %d for wal %d failed: %s", n, entry.wal_id, exc)
                        if n >= self.max_retries:
                            self._compensate(entry, txn, docs)
                            report.compensated += 1
                        continue
                    self.wal.advance(entry.wal_id, WalState.COMMITTED)
                    report.repaired += 1
                else:
                    self._compensate(entry, txn, docs)
                    report.compensated += 1
            self.sync_visibility()
            report.hash_store_fixed = self.repair_hash_store()
        return report

    def _compensate(self, entry: WalEntry, txn: Transaction | None, docs: list[str]) -> None:
        if txn is not None and txn.txn_version not in self.cold.compensated:
            self.cold.compensate(txn.txn_version)
        self.wal.advance(entry.wal_id, WalState.COMPENSATED)
        try:
            self._sync_docs(docs)
        except Exception as exc:
            log.error("could not roll hot tier back for wal %d: %s", entry.wal_id, exc)

    def repair_hash_store(self) -> int:
        """Align hash-store entries with the cold tier's active records; returns fixes."""
        if self.hashes is None:
            return 0
        fixed = 0
        for doc in sorted(set(self.cold.doc_ids()) | set(self.hashes.doc_ids())):
            want = [r.chunk_id for r in self.cold.active_by_doc(doc)]
            if doc not in self.hashes and not want and not self.cold.document_versions(doc):
                continue
            if self.hashes.get(doc) != want:
                try:
                    self.hashes.update(doc, want)
                    fixed += 1
                except HashStoreError as exc:
                    log.error("hash store repair failed for %s: %s", doc, exc)
        return fixed

    def verify_tiers(self, at_ts: int | None = None) -> DivergenceReport:
        """Compare hot active records with the cold snapshot at `at_ts` (default: now)."""
        ts = at_ts
        if ts is None:
            latest = self.cold.latest_commit_ts or 0
            ts = max(now_ms(), latest)
        cold_keys = self.cold.snapshot_as_of(ts).keys()
        hot_keys = {(r.doc_id, r.position, r.chunk_id) for r in self.hot.active_records()}
        return DivergenceReport(sorted(hot_keys - cold_keys), sorted(cold_keys - hot_keys))


class Reconciler(threading.Thread):
    """Background thread that reconciles every `interval_ms`."""

    def __init__(self, manager: TransactionManager, interval_ms: int = 500):
        super().__init__(daemon=True, name="tempovec-reconciler")
        self.manager = manager
        self.interval = interval_ms / 1000.0
        self._stop_evt = threading.Event()
        self.passes = 0

    def run(self) -> None:
        while not self._stop_evt.wait(self.interval):
            try:
                self.manager.reconcile()
            except Exception:
                log.exception("background reconcile failed")
            self.passes += 1

    def stop(self) -> None:
        self._stop_evt.set()
        self.join()
