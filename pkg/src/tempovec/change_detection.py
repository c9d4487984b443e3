"""Chunk-level change detection against a persisted per-document hash store."""

from __future__ import annotations

import json
import os
import tempfile
import threading
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .chunking import Chunk


class HashStoreError(Exception):
    """The hash store file could not be read or written."""


@dataclass
class ChangeSet:
    new: list[tuple[int, str]] = field(default_factory=list)
    modified: list[tuple[int, str, str]] = field(default_factory=list)
    deleted: list[tuple[int, str]] = field(default_factory=list)
    unchanged: list[tuple[int, str]] = field(default_factory=list)
    moved: list[tuple[int, int, str]] = field(default_factory=list)

    @property
    def is_empty(self) -> bool:
        """True when the new version is identical to the old one."""
        return not (self.new or self.modified or self.deleted or self.moved)

    @property
    def embed_positions(self) -> list[int]:
        """New-version positions that need a fresh embedding, ascending."""
        return sorted([p for p, _ in self.new] + [p for p, _, _ in self.modified])

    def counts(self) -> dict[str, int]:
        return {
            "new": len(self.new),
            "modified": len(self.modified),
            "deleted": len(self.deleted),
            "unchanged": len(self.unchanged),
            "moved": len(self.moved),
        }


def _hashes(chunks: Iterable[Chunk | str]) -> list[str]:
    return [c if isinstance(c, str) else c.chunk_id for c in chunks]


def detect_changes(old_hashes: Sequence[str], new_chunks: Sequence[Chunk | str]) -> ChangeSet:
    """Classify every chunk of a new document version against the old hash list.

    Order of matching: same hash at same position (unchanged), same hash at
    another position (moved, earliest unclaimed old occurrence first), a
    different hash at a still-unclaimed old position (modified), anything
    left over on the new side (new) or old side (deleted).
    """
    old = list(old_hashes)
    new = _hashes(new_chunks)
    cs = ChangeSet()
    old_used = [False] * len(old)
    new_done = [False] * len(new)

    for p in range(min(len(old), len(new))):
        if old[p] == new[p]:
            old_used[p] = new_done[p] = True
            cs.unchanged.append((p, new[p]))

    free: dict[str, list[int]] = defaultdict(list)
    for p, h in enumerate(old):
        if not old_used[p]:
            free[h].append(p)
    for p, h in enumerate(new):
        if new_done[p] or not free.get(h):
            continue
        q = free[h].pop(0)
        old_used[q] = new_done[p] = True
        cs.moved.append((q, p, h))

    for p, h in enumerate(new):
        if new_done[p]:
            continue
        if p < len(old) and not old_used[p]:
            old_used[p] = True
            cs.modified.append((p, old[p], h))
        else:
            cs.new.append((p, h))
        new_done[p] = True

    cs.deleted = [(p, h) for p, h in enumerate(old) if not old_used[p]]
    return cs


class HashStore:
    """Map of doc_id to the ordered chunk ids of its latest ingested version.

    Writes replace the whole file atomically, so readers of the file and
    readers of this object always see one complete version.
    """

    def __init__(self, path: str | Path, entries: dict[str, list[str]] | None = None):
        self.path = Path(path)
        self._entries: dict[str, tuple[str, ...]] = {
            k: tuple(v) for k, v in (entries or {}).items()
        }
        self._lock = threading.Lock()

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, doc_id: str) -> list[str]:
        return list(self._entries.get(doc_id, ()))

    def doc_ids(self) -> list[str]:
        return sorted(self._entries)

    def as_dict(self) -> dict[str, list[str]]:
        return {k: list(v) for k, v in self._entries.items()}

    def save(self) -> None:
        with self._lock:
            _write_atomic(self.path, self.as_dict())

    def update(self, doc_id: str, new_hashes: Sequence[str]) -> None:
        """Set and persist; on a write failure the in-memory entry is restored."""
        with self._lock:
            previous = self._entries.get(doc_id)
            self._entries[doc_id] = tuple(new_hashes)
            try:
                _write_atomic(self.path, self.as_dict())
            except OSError as exc:
                if previous is None:
                    del self._entries[doc_id]
                else:
                    self._entries[doc_id] = previous
                raise HashStoreError(f"{self.path}: failed to persist hash store: {exc}") from exc


def _write_atomic(path: Path, data: dict[str, list[str]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".hash_store.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(data, fh, sort_keys=True)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_hash_store(path: str | Path) -> HashStore:
    path = Path(path)
    if not path.exists():
        return HashStore(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise HashStoreError(f"{path}: cannot load hash store: {exc}") from exc
    if not isinstance(raw, dict) or not all(
        isinstance(k, str) and isinstance(v, list) and all(isinstance(h, str) for h in v)
        for k, v in raw.items()
    ):
        raise HashStoreError(f"{path}: malformed hash store (expected {{doc_id: [hex, ...]}})")
    return HashStore(path, raw)


def save_hash_store(store: HashStore) -> None:
    store.save()


def update_hash_store(store: HashStore, doc_id: str, new_hashes: Sequence[str]) -> None:
    store.update(doc_id, new_hashes)
