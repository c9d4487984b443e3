"""Measurement helpers shared by the acceptance suite and the scripts."""

from __future__ import annotations

import random
import statistics
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .chunking import RawDocument
from .corpus import VOCAB, Corpus, CorpusConfig, generate_corpus
from .hnsw import HnswIndex, HnswParams
from .pipeline import CorpusReport, Pipeline
from .query_engine import QueryEngine
from .store import Store, StoreConfig


def ingest_corpus(store: Store, corpus: Corpus) -> CorpusReport:
    docs = ((RawDocument(doc_id, text), ts) for doc_id, _, ts, text in corpus.documents)
    return Pipeline(store).ingest_corpus(docs)


def random_queries(n: int, seed: int = 0, words: int = 3) -> list[str]:
    rng = random.Random(seed)
    return [" ".join(rng.sample(VOCAB, words)) for _ in range(n)]


def query_fingerprint(engine: QueryEngine, queries: list[str], timestamps: list[int], k: int = 5) -> list:
    """Chunk ids and rounded similarities for current and as-of results."""
    out = []
    for text in queries:
        out.append([(h.chunk_id, h.position, round(h.similarity, 6)) for h in engine.query_current(text, k).hits])
        for ts in timestamps:
            out.append([(h.chunk_id, h.position, round(h.similarity, 6))
                        for h in engine.query_as_of(text, ts, k).hits])
    return out


def ann_recall(n: int = 10_000, dim: int = 384, n_queries: int = 100, k: int = 5,
               params: HnswParams | None = None, seed: int = 0) -> float:
    """recall@k of the HNSW index against brute force on uniform random unit vectors."""
    rng = np.random.default_rng(seed)
    data = rng.standard_normal((n, dim)).astype(np.float32)
    data /= np.linalg.norm(data, axis=1, keepdims=True)
    queries = rng.standard_normal((n_queries, dim)).astype(np.float32)
    queries /= np.linalg.norm(queries, axis=1, keepdims=True)
    index = HnswIndex(dim, params or HnswParams(), capacity=n)
    for v in data:
        index.add(v)
    hits = 0
    for q in queries:
        truth = set(np.argsort(-(data @ q))[:k].tolist())
        hits += len(truth & {s for s, _ in index.search(q, k)})
    return hits / (k * n_queries)


def latency_corpus_config(active: int = 10_000, superseded: int = 2_000, paragraphs: int = 25) -> CorpusConfig:
    """Two versions: `active` chunks, of which `superseded` get edited once."""
    docs = active // paragraphs
    rate = superseded / active
    return CorpusConfig(
        n_docs=docs, n_versions=2, min_paragraphs=paragraphs, max_paragraphs=paragraphs,
        min_rate=rate, max_rate=rate, insert_share=0.0, seed=3,
    )


@dataclass(frozen=True)
class LatencyResult:
    active: int
    total: int
    current_ms: list[float]
    as_of_ms: list[float]

    @property
    def current_p50(self) -> float:
        return statistics.median(self.current_ms)

    @property
    def as_of_p50(self) -> float:
        return statistics.median(self.as_of_ms)

    @property
    def current_p95(self) -> float:
        return float(np.percentile(self.current_ms, 95))

    @property
    def as_of_p95(self) -> float:
        return float(np.percentile(self.as_of_ms, 95))


def measure_latency(data_dir: str | Path, n_queries: int = 100, config: CorpusConfig | None = None,
                    seed: int = 1) -> LatencyResult:
    corpus = generate_corpus(config or latency_corpus_config())
    with Store(data_dir, StoreConfig(durable=False)) as store:
        report = ingest_corpus(store, corpus)
        if report.failures:
            raise RuntimeError(f"ingest failures: {report.failures[:3]}")
        engine = QueryEngine(store)
        rng = random.Random(seed)
        lo, hi = corpus.ledger[0].ts, corpus.ledger[-1].ts
        queries = random_queries(n_queries, seed)
        engine.query_current(queries[0])
        engine.query_as_of(queries[0], hi)
        cur, hist = [], []
        for text in queries:
            t0 = time.perf_counter()
            engine.query_current(text, 5)
            cur.append((time.perf_counter() - t0) * 1000)
            ts = rng.randint(lo, hi)
            t0 = time.perf_counter()
            engine.query_as_of(text, ts, 5)
            hist.append((time.perf_counter() - t0) * 1000)
        return LatencyResult(len(store.hot), store.cold.stats().total_records, cur, hist)
