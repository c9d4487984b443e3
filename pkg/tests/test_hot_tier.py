import numpy as np
import pytest

from tempovec.embedding import feature_hash
from tempovec.hot_tier import (
    ConflictError, Delete, DivergenceError, HotRecord, HotTier, HotTierError, Insert, Move, Replace,
)

DIM = 32


def rec(doc, pos, text, ts=1):
    from tempovec.chunking import hash_chunk, normalize
    return HotRecord(hash_chunk(normalize(text)), feature_hash(text, DIM), doc, pos, ts, text)


@pytest.fixture
def hot(tmp_path):
    h = HotTier(tmp_path / "hot", DIM, durable=False)
    yield h
    h.close()


def keys(h):
    return sorted((r.doc_id, r.position, r.content) for r in h.active_records())


def test_insert_search_reopen(tmp_path, hot):
    hot.apply([Insert(rec("d", 0, "red apple")), Insert(rec("d", 1, "blue sky"))])
    [(top, sim)] = hot.search(feature_hash("red apple", DIM), 1)
    assert top.content == "red apple" and sim == pytest.approx(1.0, abs=1e-5)
    hot.close()
    again = HotTier(tmp_path / "hot", DIM, durable=False)
    assert keys(again) == [("d", 0, "red apple"), ("d", 1, "blue sky")]


def test_replace_delete_move_persist(tmp_path, hot):
    a, b, c = rec("d", 0, "alpha"), rec("d", 1, "beta"), rec("d", 2, "gamma")
    hot.apply([Insert(a), Insert(b), Insert(c)])
    hot.apply([
        Replace(a.chunk_id, rec("d", 0, "alpha two", 2)),
        Delete(b.chunk_id, "d", 1),
        Move(c.chunk_id, "d", 2, 1, 2),
    ], compact=False)
    expected = [("d", 0, "alpha two"), ("d", 1, "gamma")]
    assert keys(hot) == expected
    assert hot.get("d", 1).valid_from == 2
    assert hot.stats().tombstone_count == 2
    hot.close()
    assert keys(HotTier(tmp_path / "hot", DIM, durable=False)) == expected


def test_swap_positions_in_one_batch(hot):
    a, b = rec("d", 0, "first"), rec("d", 1, "second")
    hot.apply([Insert(a), Insert(b)])
    hot.apply([Move(a.chunk_id, "d", 0, 1, 5), Move(b.chunk_id, "d", 1, 0, 5)])
    assert keys(hot) == [("d", 0, "second"), ("d", 1, "first")]


def test_conflicts_leave_state_untouched(tmp_path, hot):
    a = rec("d", 0, "alpha")
    hot.apply([Insert(a)])
    size = hot.records_path.stat().st_size
    with pytest.raises(ConflictError):
        hot.apply([Insert(rec("d", 1, "x")), Insert(rec("d", 0, "y"))])
    with pytest.raises(DivergenceError):
        hot.apply([Insert(rec("d", 1, "x")), Delete("nope", "d", 0)])
    assert keys(hot) == [("d", 0, "alpha")]
    assert hot.records_path.stat().st_size == size


def test_fault_hook_aborts_before_writes(hot):
    hot.apply([Insert(rec("d", 0, "alpha"))])

    def hook(m):
        raise OSError("injected")

    hot.fault_hook = hook
    with pytest.raises(OSError):
        hot.apply([Insert(rec("d", 1, "beta"))])
    hot.fault_hook = None
    assert keys(hot) == [("d", 0, "alpha")]


def test_auto_compaction_past_threshold(tmp_path, hot):
    recs = [rec("d", i, f"text number {i}") for i in range(10)]
    hot.apply([Insert(r) for r in recs])
    hot.apply([Delete(recs[0].chunk_id, "d", 0), Delete(recs[1].chunk_id, "d", 1)])
    # 2 of 10 slots is exactly the threshold: no rebuild yet
    assert hot.stats().tombstone_count == 2
    hot.apply([Delete(recs[2].chunk_id, "d", 2)])
    assert hot.stats().tombstone_count == 0
    assert len(hot.index) == 7
    hot.close()
    again = HotTier(tmp_path / "hot", DIM, durable=False)
    assert len(again) == 7 and again.stats().tombstone_count == 0


def test_compaction_preserves_results(hot):
    rng = np.random.default_rng(0)
    texts = [" ".join(rng.choice(list("abcdefghij"), 5)) + f" t{i}" for i in range(200)]
    recs = [rec("d", i, t) for i, t in enumerate(texts)]
    hot.apply([Insert(r) for r in recs])
    hot.apply([Delete(r.chunk_id, "d", r.position) for r in recs[:30]], compact=False)
    q = feature_hash("a b c", DIM)
    before = [(r.chunk_id, round(s, 5)) for r, s in hot.search(q, 10)]
    assert hot.compact(force=True)
    after = [(r.chunk_id, round(s, 5)) for r, s in hot.search(q, 10)]
    assert before == after


def test_stale_tombstones_ignored_after_compaction(tmp_path, hot):
    recs = [rec("d", i, f"word {i}") for i in range(4)]
    hot.apply([Insert(r) for r in recs])
    hot.apply([Delete(recs[0].chunk_id, "d", 0)], compact=False)
    old_tomb = hot.tombstones_path.read_bytes()
    hot.compact(force=True)
    hot.close()
    # simulate a crash that left the previous generation's tombstone file
    hot.tombstones_path.write_bytes(old_tomb)
    again = HotTier(tmp_path / "hot", DIM, durable=False)
    assert [r.position for r in again.active_records()] == [1, 2, 3]


def test_read_only_and_dimension_checks(tmp_path, hot):
    hot.apply([Insert(rec("d", 0, "alpha"))])
    ro = HotTier(tmp_path / "hot", DIM, writable=False)
    assert len(ro) == 1
    with pytest.raises(HotTierError):
        ro.apply([Insert(rec("d", 1, "beta"))])
    with pytest.raises(HotTierError, match="dimension"):
        HotTier(tmp_path / "hot", DIM * 2, durable=False)
    with pytest.raises(ValueError):
        hot.apply([Insert(HotRecord("x", np.zeros(3, np.float32), "d", 5, 1, "x"))])


def test_search_ties_break_by_chunk_id(hot):
    recs = [rec("d", i, "same words here" + " " * i) for i in range(3)]
    recs = [HotRecord(f"{c}", r.embedding, "d", i, 1, r.content) for i, (c, r) in enumerate(zip("cab", recs))]
    hot.apply([Insert(r) for r in recs])
    assert [r.chunk_id for r, _ in hot.search(recs[0].embedding, 3)] == ["a", "b", "c"]
