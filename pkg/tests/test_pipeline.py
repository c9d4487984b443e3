import numpy as np
import pytest

from tempovec.change_detection import detect_changes
from tempovec.chunking import RawDocument, chunk_document
from tempovec.cold_tier import ChangeType, InsertEvent
from tempovec.embedding import EmbeddingError, HashingEmbedder
from tempovec.pipeline import (
    BaselineMode, CorpusReport, IngestError, Pipeline, TimestampError, baseline_counters, build_events,
    read_manifest,
)
from tempovec.store import Store

from conftest import FAST, FIXTURES, doc


def test_first_ingest_embeds_everything(pipeline, store):
    s = pipeline.ingest_document(doc("d", "one", "two", "three"), 100)
    assert (s.new_count, s.total_chunks, s.embeddings_computed) == (3, 3, 3)
    assert s.reprocessed_fraction == 1.0 and s.txn_version == 1
    assert store.embedder.ops == 3
    assert store.hashes.get("d") == [c.chunk_id for c in chunk_document(doc("d", "one", "two", "three"))]


def test_identical_reingest_is_free(pipeline, store):
    pipeline.ingest_document(doc("d", "one", "two"), 100)
    s = pipeline.ingest_document(doc("d", "One", "two  "), 200)
    assert s.changed == 0 and s.embeddings_computed == 0 and s.txn_version is None
    assert store.cold.latest_version == 1
    # a no-op does not consume the timestamp
    pipeline.ingest_document(doc("d", "one", "TWO"), 50)


def test_one_edit(pipeline, store):
    pipeline.ingest_document(doc("d", "alpha", "beta", "gamma"), 100)
    s = pipeline.ingest_document(doc("d", "alpha", "beta changed", "gamma"), 200)
    assert (s.modified_count, s.unchanged_count, s.embeddings_computed) == (1, 2, 1)
    assert s.reprocessed_fraction == pytest.approx(1 / 3)
    [cur] = [r for r in store.cold.active_by_doc("d") if r.position == 1]
    assert cur.version_number == 2 and cur.change_type is ChangeType.UPDATE
    assert store.txm.verify_tiers().consistent


def test_move_reuses_embedding(pipeline, store):
    pipeline.ingest_document(doc("d", "alpha", "beta", "gamma"), 100)
    before = {r.chunk_id: r.embedding for r in store.cold.active_by_doc("d")}
    s = pipeline.ingest_document(doc("d", "beta", "gamma", "alpha"), 200)
    assert s.moved_count == 3 and s.embeddings_computed == 0
    after = store.cold.active_by_doc("d")
    assert [r.content for r in after] == ["beta", "gamma", "alpha"]
    for r in after:
        assert np.array_equal(r.embedding, before[r.chunk_id])
        assert r.parent_hash == r.chunk_id
    assert {(r.doc_id, r.position, r.chunk_id) for r in store.hot.active_records()} == \
        {(r.doc_id, r.position, r.chunk_id) for r in after}


def test_delete_and_insert(pipeline, store):
    pipeline.ingest_document(doc("d", "a1", "a2", "a3"), 100)
    s = pipeline.ingest_document(doc("d", "a1", "a3", "a4", "a5"), 200)
    assert s.embeddings_computed == 2 and s.unchanged_count == 1
    assert store.txm.verify_tiers().consistent
    assert [r.content for r in store.cold.active_by_doc("d")] == ["a1", "a3", "a4", "a5"]


def test_emptied_document(pipeline, store):
    pipeline.ingest_document(doc("d", "a", "b"), 100)
    s = pipeline.ingest_document(RawDocument("d", "\n\n"), 200)
    assert s.deleted_count == 2 and s.total_chunks == 0 and s.reprocessed_fraction == 0.0
    assert store.cold.active_by_doc("d") == [] and len(store.hot) == 0


def test_timestamp_rules(pipeline):
    pipeline.ingest_document(doc("d", "a"), 100)
    with pytest.raises(TimestampError):
        pipeline.ingest_document(doc("d", "b"), 100)
    pipeline.ingest_document(doc("e", "x"), 300)
    with pytest.raises(TimestampError, match="precedes"):
        pipeline.ingest_document(doc("d", "c"), 200)


def test_hash_store_disagreement_detected(pipeline, store):
    pipeline.ingest_document(doc("d", "a"), 100)
    store.hashes.update("d", ["bogus"])
    with pytest.raises(IngestError, match="reconcile"):
        pipeline.ingest_document(doc("d", "b"), 200)
    assert store.reconcile().hash_store_fixed == 1
    pipeline.ingest_document(doc("d", "b"), 200)


class _Broken(HashingEmbedder):
    def _embed_many(self, texts):
        raise EmbeddingError("service down", retryable=True)


def test_embedding_failure_commits_nothing(tmp_path):
    with Store(tmp_path / "s", FAST, embedder=_Broken(384)) as store:
        with pytest.raises(EmbeddingError):
            Pipeline(store).ingest_document(doc("d", "a"), 100)
        assert store.cold.latest_version == 0 and store.wal.entries() == []
        assert store.hashes.get("d") == []


def test_build_events_orders_closes_first():
    old = chunk_document(doc("d", "a", "b", "c"))
    new = chunk_document(doc("d", "c", "b2", "a"))
    cs = detect_changes([c.chunk_id for c in old], new)
    from tempovec.cold_tier import ColdRecord
    prev = {c.position: ColdRecord(c.chunk_id, np.ones(4, np.float32) / 2, "d", c.position, 1, c.content)
            for c in old}
    emb = {p: np.ones(4, np.float32) / 2 for p in cs.embed_positions}
    events, hot = build_events("d", new, cs, prev, emb, 10)
    kinds = [type(e) for e in events]
    first_insert = kinds.index(InsertEvent)
    assert all(k is not InsertEvent for k in kinds[:first_insert])
    assert all(k is InsertEvent for k in kinds[first_insert:])
    assert [e.record.position for e in events[first_insert:]] == [0, 1, 2]
    assert len(hot) == 3


def test_baselines():
    report = CorpusReport()
    from tempovec.pipeline import CdcSummary
    mk = lambda total, new, emb: CdcSummary("d", 1, total, new, 0, 0, total - new, 0, emb, emb / total, 1, 0.0)
    report.summaries = [mk(10, 10, 10), mk(10, 0, 0), mk(10, 1, 1)]
    assert baseline_counters(report.summaries, BaselineMode.FULL_REINDEX) == 30
    assert baseline_counters(report.summaries, "doc_level_upsert") == 20
    assert report.totals["embeddings_computed"] == 11
    assert report.mean_update_fraction == pytest.approx(0.05)


def test_ingest_corpus_skips_after_failure(pipeline):
    docs = [(doc("a", "x"), 100), (doc("a", "y"), 100), (doc("a", "z"), 300), (doc("b", "q"), 400)]
    report = pipeline.ingest_corpus(docs)
    assert [s.doc_id for s in report.summaries] == ["a", "b"]
    assert [f[0] for f in report.failures] == ["a", "a"]
    assert "skipped" in report.failures[1][2]


def test_manifest(tmp_path, pipeline):
    rows = read_manifest(FIXTURES / "temporal" / "manifest.jsonl")
    assert len(rows) == 15 and rows[0][0].doc_id == "runbook"
    report = pipeline.ingest_corpus(rows)
    assert not report.failures
    bad = tmp_path / "m.jsonl"
    bad.write_text('{"doc_id": "x"}\n')
    with pytest.raises(ValueError, match="m.jsonl:1"):
        read_manifest(bad)


def test_summary_json_without_timing(pipeline):
    s = pipeline.ingest_document(doc("d", "a"), 100)
    assert "elapsed_ms" not in s.to_json(timing=False)
    assert "elapsed_ms" in s.to_dict()
