import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tempovec.pipeline import read_manifest
from tempovec.query_engine import AsOf, QueryEngine, QuerySpec, Range, Route, classify

from conftest import FIXTURES

TEMPORAL = FIXTURES / "temporal"


@pytest.fixture
def loaded(pipeline, store):
    report = pipeline.ingest_corpus(read_manifest(TEMPORAL / "manifest.jsonl"))
    assert not report.failures
    return QueryEngine(store)


def test_classify():
    assert classify(QuerySpec("x")) is Route.HOT
    assert classify(QuerySpec("x", temporal=AsOf(5))) is Route.COLD
    assert classify(QuerySpec("x", temporal=Range(1, 2))) is Route.BOTH
    with pytest.raises(ValueError):
        Range(5, 5)
    with pytest.raises(ValueError):
        QuerySpec("x", k=0)


def test_empty_store(store):
    engine = QueryEngine(store)
    assert engine.query_current("anything").hits == []
    assert engine.query_as_of("anything", 10).hits == []


def test_labeled_as_of_queries(loaded):
    cases = json.loads((TEMPORAL / "queries.json").read_text())
    assert len(cases) == 20
    for case in cases:
        hits = loaded.query_as_of(case["text"], case["ts"], 1).hits
        assert hits and hits[0].content == case["expected"], case


def test_before_first_ingest_is_empty(loaded):
    assert loaded.query_as_of("primary database", 999, 5).hits == []


def test_current_matches_latest_snapshot(loaded, store):
    current = loaded.query_current("primary database host", 3)
    latest = loaded.query_as_of("primary database host", store.cold.latest_commit_ts, 3)
    assert [h.chunk_id for h in current.hits] == [h.chunk_id for h in latest.hits]
    assert current.hits[0].valid_to is None and current.hits[0].tier == "hot"


def test_range_diff(loaded):
    res = loaded.query_range("primary database host", 1500, 5500, 1)
    assert res.at_start.hits[0].content.startswith("The primary database is Postgres")
    assert res.at_end.hits[0].content.startswith("The primary database is CockroachDB")
    assert len(res.only_start) == len(res.only_end) == 1 and res.both == []
    mid = loaded.query_range("primary database host", 1500, 2500, 1)
    assert mid.at_end.route is Route.COLD


def test_run_dispatch(loaded):
    assert loaded.run(QuerySpec("invoices issued", 1)).route is Route.HOT
    r = loaded.run(QuerySpec("invoices issued", 1, AsOf(3000)))
    assert r.hits[0].content == "Invoices are issued monthly in arrears."
    assert loaded.run(QuerySpec("invoices issued", 1, Range(3000, 3600))).only_end


def test_hit_json_roundtrip(loaded):
    hit = loaded.query_as_of("passwords rotate", 1300, 1).hits[0]
    row = json.loads(hit.to_json())
    assert row["valid_from"] == 1200 and row["valid_to"] == 2200 and row["tier"] == "cold"


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 7000), st.sampled_from(
    ["primary database", "discount", "passwords", "disk encryption", "storage team", "renewals", "laptops"]))
def test_no_temporal_leakage(loaded_engine, ts, text):
    for h in loaded_engine.query_as_of(text, ts, 10).hits:
        assert h.valid_from <= ts and (h.valid_to is None or ts < h.valid_to)


@pytest.fixture(scope="module")
def loaded_engine(tmp_path_factory):
    from tempovec.pipeline import Pipeline
    from tempovec.store import Store

    from conftest import FAST

    store = Store(tmp_path_factory.mktemp("q") / "data", FAST)
    Pipeline(store).ingest_corpus(read_manifest(TEMPORAL / "manifest.jsonl"))
    yield QueryEngine(store)
    store.close()
