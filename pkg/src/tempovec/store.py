"""A data directory holding both tiers, the WAL and the hash store.

Layout::

    <data_dir>/meta.json          embedding dimension, fixed at init
    <data_dir>/LOCK               flock target for the single writer
    <data_dir>/hash_store.json
    <data_dir>/wal.log
    <data_dir>/cold/commits.log
    <data_dir>/hot/records.bin, hot/tombstones.bin
"""

from __future__ import annotations

import fcntl
import json
import os
from dataclasses import dataclass
from pathlib import Path

from .change_detection import HashStore, load_hash_store
from .cold_tier import ColdTier
from .embedding import DEFAULT_DIMENSION, Embedder, EmbedderConfig, Provider, make_embedder
from .hnsw import HnswParams
from .hot_tier import COMPACT_THRESHOLD, HotTier
from .transactions import Reconciler, ReconcileReport, TransactionManager, WriteAheadLog

META_FORMAT = 1


class StoreError(Exception):
    pass


class StoreLockedError(StoreError):
    pass


@dataclass(frozen=True)
class StoreConfig:
    dimension: int = DEFAULT_DIMENSION
    provider: Provider = Provider.DETERMINISTIC
    embed_endpoint: str | None = None
    embed_timeout: float = 10.0
    M: int = 16
    ef_construction: int = 200
    ef_search: int = 64
    index_seed: int = 0
    reconcile_interval_ms: int = 500
    compact_threshold: float = COMPACT_THRESHOLD
    durable: bool = True

    @property
    def hnsw(self) -> HnswParams:
        return HnswParams(self.M, self.ef_construction, self.ef_search, self.index_seed)

    @property
    def embedder(self) -> EmbedderConfig:
        return EmbedderConfig(self.dimension, Provider(self.provider), self.embed_endpoint, self.embed_timeout)


class Store:
    """Opens every component of a data directory.

    A writer takes an exclusive lock on ``LOCK`` and reconciles before
    returning. Readers take no lock and see only committed transactions.
    """

    def __init__(
        self,
        data_dir: str | Path,
        config: StoreConfig | None = None,
        writer: bool = True,
        embedder: Embedder | None = None,
        reconcile_on_open: bool = True,
    ):
        self.data_dir = Path(data_dir)
        self.writer = writer
        self._lock_fh = None
        if not writer and not (self.data_dir / "meta.json").exists():
            raise StoreError(f"{self.data_dir}: not an initialized data directory")
        self.data_dir.mkdir(parents=True, exist_ok=True)
        if writer:
            self._acquire_lock()
        try:
            self.config = self._check_meta(config or StoreConfig())
            cfg = self.config
            self.embedder = embedder or make_embedder(cfg.embedder)
            if self.embedder.dimension != cfg.dimension:
                raise StoreError(
                    f"embedder dimension {self.embedder.dimension} != store dimension {cfg.dimension}"
                )
            self.hashes: HashStore = load_hash_store(self.data_dir / "hash_store.json")
            self.cold = ColdTier(self.data_dir / "cold", cfg.dimension, cfg.durable, writer)
            self.wal = WriteAheadLog(self.data_dir / "wal.log", cfg.durable, writer)
            self.hot = HotTier(
                self.data_dir / "hot", cfg.dimension, cfg.hnsw, cfg.durable, writer, cfg.compact_threshold
            )
            self.txm = TransactionManager(self.cold, self.hot, self.wal, self.hashes)
            self.last_reconcile: ReconcileReport | None = None
            if writer and reconcile_on_open:
                self.last_reconcile = self.txm.reconcile()
        except BaseException:
            self._release_lock()
            raise
        self._reconciler: Reconciler | None = None

    def _acquire_lock(self) -> None:
        fh = open(self.data_dir / "LOCK", "a+")
        try:
            fcntl.flock(fh.fileno(), fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError:
            fh.close()
            raise StoreLockedError(f"{self.data_dir}: another process holds the writer lock")
        fh.seek(0)
        fh.truncate()
        fh.write(str(os.getpid()))
        fh.flush()
        self._lock_fh = fh

    def _release_lock(self) -> None:
        if self._lock_fh is not None:
            fcntl.flock(self._lock_fh.fileno(), fcntl.LOCK_UN)
            self._lock_fh.close()
            self._lock_fh = None

    def _check_meta(self, config: StoreConfig) -> StoreConfig:
        path = self.data_dir / "meta.json"
        if path.exists():
            try:
                meta = json.loads(path.read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise StoreError(f"{path}: unreadable store metadata: {exc}") from exc
            if meta.get("dimension") != config.dimension:
                raise StoreError(
                    f"{self.data_dir}: initialized with dimension {meta.get('dimension')}, "
                    f"configured {config.dimension}"
                )
            return config
        meta = {"format": META_FORMAT, "dimension": config.dimension}
        tmp = path.with_name("meta.json.tmp")
        tmp.write_text(json.dumps(meta, indent=2, sort_keys=True))
        os.replace(tmp, path)
        return config

    @staticmethod
    def stored_dimension(data_dir: str | Path) -> int | None:
        path = Path(data_dir) / "meta.json"
        if not path.exists():
            return None
        try:
            return int(json.loads(path.read_text())["dimension"])
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise StoreError(f"{path}: unreadable store metadata: {exc}") from exc

    def refresh(self) -> None:
        """Pick up commits made by another process (readers)."""
        self.wal.refresh()
        self.cold.refresh()
        self.txm.sync_visibility()

    def reconcile(self) -> ReconcileReport:
        return self.txm.reconcile()

    def start_reconciler(self, interval_ms: int | None = None) -> Reconciler:
        if self._reconciler is None:
            self._reconciler = Reconciler(self.txm, interval_ms or self.config.reconcile_interval_ms)
            self._reconciler.start()
        return self._reconciler

    def close(self) -> None:
        if self._reconciler is not None:
            self._reconciler.stop()
            self._reconciler = None
        self.hot.close()
        self.cold.close()
        self.wal.close()
        self._release_lock()

    def __enter__(self) -> "Store":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
