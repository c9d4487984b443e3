"""Hot tier: active chunk records behind an HNSW index.

On disk the tier is ``records.bin`` (CRC frames, one per inserted record or
position update) and ``tombstones.bin`` (u64 slot numbers). The graph is
rebuilt from the record file on open. Both files carry a generation number
so a crash in the middle of compaction never applies stale tombstones to a
rewritten record file.
"""

from __future__ import annotations

import logging
import os
import struct
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from .embedding import check_vector
from .framing import FrameFile, decode, encode, frame, replace_file
from .hnsw import HnswIndex, HnswParams

log = logging.getLogger(__name__)

_U64 = struct.Struct("<Q")
COMPACT_THRESHOLD = 0.2


class HotTierError(Exception):
    pass


class ConflictError(HotTierError):
    """A live record already occupies the (doc_id, position) key."""


class DivergenceError(HotTierError):
    """A mutation referenced a record the hot tier does not hold."""


@dataclass(frozen=True)
class HotRecord:
    chunk_id: str
    embedding: np.ndarray = field(repr=False, compare=False)
    doc_id: str
    position: int
    valid_from: int
    content: str
    status: str = "active"

    @property
    def key(self) -> tuple[str, int]:
        return (self.doc_id, self.position)


@dataclass(frozen=True)
class HotStats:
    active_count: int
    tombstone_count: int
    dimension: int
    index_params: HnswParams


# Mutations applied as one batch by `HotTier.apply`.
@dataclass(frozen=True)
class Insert:
    record: HotRecord


@dataclass(frozen=True)
class Replace:
    old_chunk_id: str
    record: HotRecord


@dataclass(frozen=True)
class Delete:
    chunk_id: str
    doc_id: str
    position: int


@dataclass(frozen=True)
class Move:
    chunk_id: str
    doc_id: str
    old_position: int
    new_position: int
    valid_from: int


HotMutation = Insert | Replace | Delete | Move


class HotTier:
    def __init__(
        self,
        directory: str | Path,
        dimension: int,
        params: HnswParams | None = None,
        durable: bool = True,
        writable: bool = True,
        compact_threshold: float = COMPACT_THRESHOLD,
    ):
        self.directory = Path(directory)
        self.dimension = dimension
        self.params = params or HnswParams()
        self.durable = durable
        self.writable = writable
        self.compact_threshold = compact_threshold
        # Called with each mutation before it is applied; tests use it to inject faults.
        self.fault_hook: Callable[[HotMutation], None] | None = None
        self._lock = threading.RLock()
        if writable:
            self.directory.mkdir(parents=True, exist_ok=True)
        self._load()

    @property
    def records_path(self) -> Path:
        return self.directory / "records.bin"

    @property
    def tombstones_path(self) -> Path:
        return self.directory / "tombstones.bin"

    # -- loading -----------------------------------------------------------
    def _load(self) -> None:
        self._records: list[HotRecord] = []
        self._live: dict[tuple[str, int], int] = {}
        self._index = HnswIndex(self.dimension, self.params)
        self._file = FrameFile(self.records_path, self.durable, self.writable)
        self._gen = 0
        frames = self._file.read_all()
        if not frames and self.writable:
            self._file.append(encode({"k": "hdr", "gen": 0, "dim": self.dimension}))
            frames = self._file.read_all()
        for _, payload in frames:
            item = decode(payload)
            kind = item["k"]
            if kind == "hdr":
                self._gen = item["gen"]
                if item["dim"] != self.dimension:
                    raise HotTierError(
                        f"{self.records_path}: dimension {item['dim']} != configured {self.dimension}"
                    )
            elif kind == "rec":
                rec = HotRecord(
                    item["chunk_id"], item["embedding"], item["doc_id"], item["position"],
                    item["valid_from"], item["content"],
                )
                self._link(rec)
            elif kind == "mv":
                self._relocate(item["slot"], item["position"], item["valid_from"])
        for slot in self._read_tombstones():
            self._unlink(slot)

    def _read_tombstones(self) -> list[int]:
        path = self.tombstones_path
        if not path.exists():
            return []
        data = path.read_bytes()
        if len(data) < 8 or _U64.unpack_from(data, 0)[0] != self._gen:
            return []
        usable = (len(data) // 8) * 8
        slots = [_U64.unpack_from(data, off)[0] for off in range(8, usable, 8)]
        return [s for s in slots if s < len(self._records)]

    def _link(self, rec: HotRecord) -> int:
        slot = self._index.add(rec.embedding)
        assert slot == len(self._records)
        self._records.append(rec)
        prev = self._live.get(rec.key)
        if prev is not None:
            # Replayed over a live key: the later record wins.
            self._index.mark_deleted(prev)
        self._live[rec.key] = slot
        return slot

    def _unlink(self, slot: int) -> None:
        rec = self._records[slot]
        if self._live.get(rec.key) == slot:
            del self._live[rec.key]
        self._index.mark_deleted(slot)

    def _relocate(self, slot: int, position: int, valid_from: int) -> None:
        rec = self._records[slot]
        if self._live.get(rec.key) == slot:
            del self._live[rec.key]
        moved = replace(rec, position=position, valid_from=valid_from)
        self._records[slot] = moved
        self._live[moved.key] = slot

    # -- reads -------------------------------------------------------------
    def get(self, doc_id: str, position: int) -> HotRecord | None:
        with self._lock:
            slot = self._live.get((doc_id, position))
            return None if slot is None else self._records[slot]

    def active_records(self) -> list[HotRecord]:
        with self._lock:
            return [self._records[s] for s in sorted(self._live.values())]

    def __len__(self) -> int:
        return len(self._live)

    def search(self, query: np.ndarray, k: int) -> list[tuple[HotRecord, float]]:
        """Approximate top-k active records by cosine similarity.

        The whole ef-sized candidate list is ranked so that equal
        similarities come back ordered by chunk_id.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        q = check_vector(query, self.dimension)
        with self._lock:
            width = max(k, self.params.ef_search)
            found = self._index.search(q, width, ef=width)
            hits = [(self._records[s], sim) for s, sim in found]
        hits.sort(key=lambda h: (-h[1], h[0].chunk_id, h[0].doc_id, h[0].position))
        return hits[:k]

    def stats(self) -> HotStats:
        with self._lock:
            return HotStats(len(self._live), self._index.deleted_count, self.dimension, self.params)

    @property
    def index(self) -> HnswIndex:
        return self._index

    # -- writes ------------------------------------------------------------
    def insert(self, record: HotRecord) -> None:
        self.apply([Insert(record)])

    def replace(self, old_chunk_id: str, new_record: HotRecord) -> None:
        self.apply([Replace(old_chunk_id, new_record)])

    def delete(self, chunk_id: str, doc_id: str, position: int) -> None:
        self.apply([Delete(chunk_id, doc_id, position)])

    def move(self, chunk_id: str, doc_id: str, old_position: int, new_position: int, valid_from: int) -> None:
        self.apply([Move(chunk_id, doc_id, old_position, new_position, valid_from)])

    def _require_live(self, chunk_id: str, doc_id: str, position: int) -> int:
        slot = self._live.get((doc_id, position))
        if slot is None or self._records[slot].chunk_id != chunk_id:
            raise DivergenceError(f"no live record {chunk_id[:12]} at {doc_id}:{position}")
        return slot

    def apply(self, mutations: list[HotMutation], compact: bool = True) -> None:
        """Apply a batch atomically with respect to searches.

        Removals (the old side of replaces, deletes, the source side of
        moves) are resolved before any key is re-occupied, so a batch can
        shuffle positions freely. Validation runs over the whole batch
        before anything is written.
        """
        if not self.writable:
            raise HotTierError("hot tier opened read-only")
        with self._lock:
            vacated: set[tuple[str, int]] = set()
            removals: list[int] = []
            moves: list[tuple[int, int, int]] = []
            inserts: list[HotRecord] = []
            for m in mutations:
                if self.fault_hook is not None:
                    self.fault_hook(m)
                if isinstance(m, Insert):
                    inserts.append(m.record)
                elif isinstance(m, Replace):
                    removals.append(self._require_live(m.old_chunk_id, m.record.doc_id, m.record.position))
                    vacated.add(m.record.key)
                    inserts.append(m.record)
                elif isinstance(m, Delete):
                    removals.append(self._require_live(m.chunk_id, m.doc_id, m.position))
                    vacated.add((m.doc_id, m.position))
                elif isinstance(m, Move):
                    slot = self._require_live(m.chunk_id, m.doc_id, m.old_position)
                    moves.append((slot, m.new_position, m.valid_from))
                    vacated.add((m.doc_id, m.old_position))
                else:
                    raise TypeError(f"unknown mutation {m!r}")

            occupied = {k for k in self._live if k not in vacated}
            for rec in inserts:
                check_vector(rec.embedding, self.dimension)
            targets = [r.key for r in inserts] + [
                (self._records[s].doc_id, p) for s, p, _ in moves
            ]
            seen: set[tuple[str, int]] = set()
            for key in targets:
                if key in occupied or key in seen:
                    raise ConflictError(f"live record already at {key[0]}:{key[1]}")
                seen.add(key)

            first_slot = len(self._records)
            frames = [
                encode({"k": "mv", "slot": s, "position": p, "valid_from": t}) for s, p, t in moves
            ] + [
                encode({
                    "k": "rec", "chunk_id": r.chunk_id, "doc_id": r.doc_id, "position": r.position,
                    "valid_from": r.valid_from, "content": r.content,
                    "embedding": np.asarray(r.embedding, dtype=np.float32),
                })
                for r in inserts
            ]
            if frames:
                self._file.append_many(frames)
            if removals:
                self._append_tombstones(removals)

            for slot in removals:
                self._unlink(slot)
            for slot, pos, ts in moves:
                self._relocate(slot, pos, ts)
            for rec in inserts:
                self._link(replace(rec, embedding=np.asarray(rec.embedding, dtype=np.float32)))
            assert first_slot + len(inserts) == len(self._records)

            if compact and self._tombstone_ratio() > self.compact_threshold:
                self.compact()

    def _append_tombstones(self, slots: list[int]) -> None:
        path = self.tombstones_path
        if not path.exists() or path.stat().st_size < 8:
            replace_file(path, _U64.pack(self._gen), self.durable)
        with open(path, "ab") as fh:
            fh.write(b"".join(_U64.pack(s) for s in slots))
            fh.flush()
            if self.durable:
                os.fsync(fh.fileno())

    def _tombstone_ratio(self) -> float:
        total = len(self._index)
        return self._index.deleted_count / total if total else 0.0

    def compact(self, force: bool = False) -> bool:
        """Rebuild file and graph over live records when tombstones exceed the threshold.

        Returns True when a rebuild happened.
        """
        with self._lock:
            if self._index.deleted_count == 0:
                return False
            if not force and self._tombstone_ratio() <= self.compact_threshold:
                return False
            live = self.active_records()
            gen = self._gen + 1
            blob = bytearray()
            blob += frame(encode({"k": "hdr", "gen": gen, "dim": self.dimension}))
            for r in live:
                blob += frame(encode({
                    "k": "rec", "chunk_id": r.chunk_id, "doc_id": r.doc_id, "position": r.position,
                    "valid_from": r.valid_from, "content": r.content,
                    "embedding": np.asarray(r.embedding, dtype=np.float32),
                }))
            self._file.close()
            replace_file(self.records_path, bytes(blob), self.durable)
            replace_file(self.tombstones_path, _U64.pack(gen), self.durable)
            log.info("compacted hot tier to %d records (generation %d)", len(live), gen)
            self._load()
            return True

    def close(self) -> None:
        self._file.close()

    def iter_slots(self) -> Iterator[tuple[int, HotRecord, bool]]:
        for slot, rec in enumerate(self._records):
            yield slot, rec, self._index.is_deleted(slot)
