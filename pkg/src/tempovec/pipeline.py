"""Ingestion: chunk, detect changes, embed what changed, commit both tiers."""

from __future__ import annotations

import json
import logging
import statistics
import time
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .change_detection import ChangeSet, HashStoreError, detect_changes
from .chunking import Chunk, RawDocument, chunk_document, load_document
from .cold_tier import ChangeType, ColdRecord, DeleteEvent, Event, InsertEvent, Status, SupersedeEvent
from .hot_tier import Delete, HotMutation, HotRecord, Insert, Move, Replace
from .store import Store
from .transactions import TransactionError, now_ms

log = logging.getLogger(__name__)


class IngestError(Exception):
    pass


class TimestampError(IngestError):
    pass


@dataclass(frozen=True)
class CdcSummary:
    doc_id: str
    ingest_ts: int
    total_chunks: int
    new_count: int
    modified_count: int
    deleted_count: int
    unchanged_count: int
    moved_count: int
    embeddings_computed: int
    reprocessed_fraction: float
    txn_version: int | None
    elapsed_ms: float

    @property
    def changed(self) -> int:
        return self.new_count + self.modified_count + self.deleted_count + self.moved_count

    def to_dict(self, timing: bool = True) -> dict:
        d = asdict(self)
        if not timing:
            del d["elapsed_ms"]
        return d

    def to_json(self, timing: bool = True) -> str:
        return json.dumps(self.to_dict(timing), sort_keys=True)


def build_events(
    doc_id: str,
    chunks: Sequence[Chunk],
    changes: ChangeSet,
    previous: dict[int, ColdRecord],
    embeddings: dict[int, np.ndarray],
    ts: int,
) -> tuple[list[Event], list[HotMutation]]:
    """Translate a ChangeSet into cold events and hot mutations.

    `previous` maps old positions to the active cold records; `embeddings`
    maps new positions (new and modified only) to fresh vectors. Moved
    chunks reuse the old embedding.
    """
    closes: list[Event] = []
    inserts: list[tuple[int, ColdRecord]] = []
    hot: list[HotMutation] = []

    def record(pos: int, emb: np.ndarray, version: int, parent: str | None) -> ColdRecord:
        c = chunks[pos]
        kind = ChangeType.UPDATE if parent is not None else ChangeType.INSERT
        return ColdRecord(c.chunk_id, emb, doc_id, pos, ts, c.content, None, Status.ACTIVE, version, parent, kind)

    def hot_rec(rec: ColdRecord) -> HotRecord:
        return HotRecord(rec.chunk_id, rec.embedding, doc_id, rec.position, ts, rec.content)

    for pos, old_id, _ in changes.modified:
        closes.append(SupersedeEvent(doc_id, pos, old_id, ts))
    for old_pos, old_id in changes.deleted:
        closes.append(DeleteEvent(doc_id, old_pos, old_id, ts))
        hot.append(Delete(old_id, doc_id, old_pos))
    for old_pos, _, cid in changes.moved:
        closes.append(SupersedeEvent(doc_id, old_pos, cid, ts))

    for pos, _ in changes.new:
        rec = record(pos, embeddings[pos], 1, None)
        inserts.append((pos, rec))
        hot.append(Insert(hot_rec(rec)))
    for pos, old_id, _ in changes.modified:
        rec = record(pos, embeddings[pos], previous[pos].version_number + 1, old_id)
        inserts.append((pos, rec))
        hot.append(Replace(old_id, hot_rec(rec)))
    for old_pos, pos, cid in changes.moved:
        prev = previous[old_pos]
        rec = record(pos, prev.embedding, prev.version_number + 1, cid)
        inserts.append((pos, rec))
        hot.append(Move(cid, doc_id, old_pos, pos, ts))

    inserts.sort(key=lambda t: t[0])
    return closes + [InsertEvent(r) for _, r in inserts], hot


@dataclass
class CorpusReport:
    summaries: list[CdcSummary] = field(default_factory=list)
    failures: list[tuple[str, int, str]] = field(default_factory=list)

    def _sum(self, name: str) -> int:
        return sum(getattr(s, name) for s in self.summaries)

    @property
    def totals(self) -> dict[str, int]:
        names = ("total_chunks", "new_count", "modified_count", "deleted_count",
                 "unchanged_count", "moved_count", "embeddings_computed")
        return {n: self._sum(n) for n in names}

    def non_first(self) -> list[CdcSummary]:
        seen: set[str] = set()
        out = []
        for s in self.summaries:
            if s.doc_id in seen:
                out.append(s)
            seen.add(s.doc_id)
        return out

    @property
    def mean_update_fraction(self) -> float:
        rest = self.non_first()
        return statistics.fmean(s.reprocessed_fraction for s in rest) if rest else 0.0

    def latency_ms(self) -> dict[str, float]:
        lat = sorted(s.elapsed_ms for s in self.summaries)
        if not lat:
            return {"p50": 0.0, "p95": 0.0, "max": 0.0}
        return {
            "p50": float(np.percentile(lat, 50)),
            "p95": float(np.percentile(lat, 95)),
            "max": lat[-1],
        }


class BaselineMode(str, Enum):
    FULL_REINDEX = "full_reindex"
    DOC_LEVEL_UPSERT = "doc_level_upsert"


def baseline_counters(summaries: Iterable[CdcSummary], mode: BaselineMode | str) -> int:
    """Embedding operations a simpler strategy would have spent on the same ingests.

    full_reindex embeds every chunk of every version; doc_level_upsert
    re-embeds every chunk of a document whenever anything in it changed.
    """
    mode = BaselineMode(mode)
    total = 0
    for s in summaries:
        if mode is BaselineMode.FULL_REINDEX:
            total += s.total_chunks
        elif s.changed:
            total += s.total_chunks
    return total


class Pipeline:
    def __init__(self, store: Store):
        self.store = store

    def _last_doc_ts(self, doc_id: str) -> int | None:
        versions = self.store.cold.document_versions(doc_id)
        return versions[-1].commit_ts if versions else None

    def ingest_document(self, doc: RawDocument, ingest_ts: int | None = None) -> CdcSummary:
        started = time.perf_counter()
        store = self.store
        ts = now_ms() if ingest_ts is None else int(ingest_ts)

        chunks = chunk_document(doc)
        old = store.hashes.get(doc.doc_id)
        changes = detect_changes(old, chunks)

        txn_version = None
        embedded = 0
        if not changes.is_empty:
            last = self._last_doc_ts(doc.doc_id)
            if last is not None and ts <= last:
                raise TimestampError(f"{doc.doc_id}: ingest_ts {ts} must exceed previous version {last}")
            latest = store.cold.latest_commit_ts
            if latest is not None and ts < latest:
                raise TimestampError(f"{doc.doc_id}: ingest_ts {ts} precedes latest commit {latest}")

            previous = {r.position: r for r in store.cold.active_by_doc(doc.doc_id)}
            if [previous[p].chunk_id for p in sorted(previous)] != old:
                raise IngestError(f"{doc.doc_id}: hash store disagrees with cold tier; run reconcile")

            positions = changes.embed_positions
            vectors = store.embedder.embed_batch([chunks[p].normalized for p in positions])
            embedded = len(vectors)
            embeddings = dict(zip(positions, vectors))
            events, mutations = build_events(doc.doc_id, chunks, changes, previous, embeddings, ts)
            try:
                entry = store.txm.commit_dual(events, mutations, ts, [doc.doc_id])
            except TransactionError as exc:
                raise IngestError(f"{doc.doc_id}: commit failed: {exc}") from exc
            txn_version = entry.cold_txn_version
            try:
                store.hashes.update(doc.doc_id, [c.chunk_id for c in chunks])
            except HashStoreError as exc:
                raise IngestError(f"{doc.doc_id}: {exc}") from exc
            store.txm.boundary("hash_store")

        total = len(chunks)
        counts = changes.counts()
        return CdcSummary(
            doc_id=doc.doc_id,
            ingest_ts=ts,
            total_chunks=total,
            new_count=counts["new"],
            modified_count=counts["modified"],
            deleted_count=counts["deleted"],
            unchanged_count=counts["unchanged"],
            moved_count=counts["moved"],
            embeddings_computed=embedded,
            reprocessed_fraction=embedded / total if total else 0.0,
            txn_version=txn_version,
            elapsed_ms=(time.perf_counter() - started) * 1000.0,
        )

    def ingest_corpus(self, docs: Iterable[tuple[RawDocument, int]]) -> CorpusReport:
        report = CorpusReport()
        failed: set[str] = set()
        for doc, ts in docs:
            if doc.doc_id in failed:
                report.failures.append((doc.doc_id, ts, "skipped after earlier failure"))
                continue
            try:
                report.summaries.append(self.ingest_document(doc, ts))
            except Exception as exc:
                log.warning("ingest of %s@%s failed: %s", doc.doc_id, ts, exc)
                failed.add(doc.doc_id)
                report.failures.append((doc.doc_id, ts, str(exc)))
        return report


def read_manifest(path: str | Path) -> list[tuple[RawDocument, int]]:
    """Load a JSON-lines manifest of ``{"doc_id", "path", "ts"}`` rows.

    Relative paths resolve against the manifest's directory.
    """
    path = Path(path)
    out = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            doc_path = Path(row["path"])
            ts = int(row["ts"])
            doc_id = str(row["doc_id"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{path}:{lineno}: bad manifest row: {exc}") from exc
        if not doc_path.is_absolute():
            doc_path = path.parent / doc_path
        out.append((load_document(doc_path, doc_id), ts))
    return out
