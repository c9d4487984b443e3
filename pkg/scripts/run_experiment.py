#!/usr/bin/env python3
"""Ingest the synthetic corpus and report reprocessing, storage and recall figures.

Also prints the embedding counts two simpler strategies would have spent on
the same ingests, for comparison.
"""

import argparse
import json
import tempfile
import time

from tempovec.bench import ann_recall, ingest_corpus
from tempovec.corpus import CorpusConfig, generate_corpus
from tempovec.hnsw import HnswParams
from tempovec.pipeline import BaselineMode, baseline_counters
from tempovec.store import Store, StoreConfig


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--docs", type=int, default=100)
    parser.add_argument("--versions", type=int, default=5)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--data-dir", default=None, help="keep the store here instead of a temp dir")
    parser.add_argument("--recall", action="store_true", help="also measure ANN recall on random vectors")
    parser.add_argument("--ef-search", type=int, nargs="*", default=[64])
    args = parser.parse_args()

    corpus = generate_corpus(CorpusConfig(n_docs=args.docs, n_versions=args.versions, seed=args.seed))
    with tempfile.TemporaryDirectory() as tmp:
        t0 = time.perf_counter()
        with Store(args.data_dir or tmp, StoreConfig(durable=False)) as store:
            report = ingest_corpus(store, corpus)
            elapsed = time.perf_counter() - t0
            hot = store.hot.stats()
            cold = store.cold.stats()

    out = {
        "ingests": len(report.summaries),
        "failures": len(report.failures),
        "seconds": round(elapsed, 2),
        "scripted_change_rate": round(corpus.scripted_change_rate, 4),
        "mean_reprocessed_fraction": round(report.mean_update_fraction, 4),
        "embeddings": {
            "incremental": report.totals["embeddings_computed"],
            "full_reindex": baseline_counters(report.summaries, BaselineMode.FULL_REINDEX),
            "doc_level_upsert": baseline_counters(report.summaries, BaselineMode.DOC_LEVEL_UPSERT),
        },
        "hot_active": hot.active_count,
        "cold_records": cold.total_records,
        "cold_chunk_versions": cold.chunk_versions,
        "hot_reduction_pct": round(100 * (1 - hot.active_count / cold.chunk_versions), 2),
        "ingest_latency_ms": {k: round(v, 2) for k, v in report.latency_ms().items()},
    }
    if args.recall:
        out["recall_at_5"] = {
            ef: round(ann_recall(params=HnswParams(ef_search=ef)), 4) for ef in args.ef_search
        }
    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()
