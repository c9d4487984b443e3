import numpy as np
import pytest

from tempovec.hnsw import HnswIndex, HnswParams


def unit(rng, n, dim):
    x = rng.standard_normal((n, dim)).astype(np.float32)
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def clustered(rng, n, dim, centers=50, spread=0.5):
    c = unit(rng, centers, dim)
    x = c[rng.integers(0, centers, n)] + spread * rng.standard_normal((n, dim)).astype(np.float32) / np.sqrt(dim)
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def build(vectors, **kw):
    idx = HnswIndex(vectors.shape[1], HnswParams(**kw))
    for v in vectors:
        idx.add(v)
    return idx


def recall(idx, data, queries, k):
    hits = 0
    for q in queries:
        truth = set(np.argsort(-(data @ q))[:k].tolist())
        hits += len(truth & {s for s, _ in idx.search(q, k)})
    return hits / (k * len(queries))


def test_empty_and_single():
    idx = HnswIndex(4)
    assert idx.search(np.ones(4, np.float32), 3) == []
    idx.add(np.array([1, 0, 0, 0], np.float32))
    [(slot, sim)] = idx.search(np.array([1, 0, 0, 0], np.float32), 3)
    assert slot == 0 and sim == pytest.approx(1.0)


def test_shape_checks():
    idx = HnswIndex(4)
    with pytest.raises(ValueError):
        idx.add(np.ones(3))
    with pytest.raises(ValueError):
        idx.search(np.ones(4), 0)


def test_small_index_is_exact():
    rng = np.random.default_rng(1)
    data = unit(rng, 40, 16)
    idx = build(data)
    q = unit(rng, 1, 16)[0]
    assert [s for s, _ in idx.search(q, 5)] == np.argsort(-(data @ q))[:5].tolist()


def test_recall_on_clustered_data():
    rng = np.random.default_rng(2)
    data = clustered(rng, 3000, 64)
    idx = build(data)
    queries = clustered(rng, 50, 64)
    assert recall(idx, data, queries, 5) >= 0.95


def test_recall_improves_with_ef():
    rng = np.random.default_rng(3)
    data = unit(rng, 2000, 32)
    idx = build(data)
    queries = unit(rng, 40, 32)
    low = sum(len(set(s for s, _ in idx.search(q, 5, ef=8)) & set(np.argsort(-(data @ q))[:5].tolist()))
              for q in queries)
    high = sum(len(set(s for s, _ in idx.search(q, 5, ef=200)) & set(np.argsort(-(data @ q))[:5].tolist()))
               for q in queries)
    assert high >= low
    assert high / (5 * len(queries)) >= 0.95


def test_deleted_slots_never_returned():
    rng = np.random.default_rng(4)
    data = unit(rng, 500, 16)
    idx = build(data)
    gone = set(range(0, 500, 3))
    for s in gone:
        idx.mark_deleted(s)
    assert idx.deleted_count == len(gone) and idx.live_count == 500 - len(gone)
    for q in unit(rng, 30, 16):
        assert not {s for s, _ in idx.search(q, 10)} & gone


def test_degree_bounds_and_connectivity():
    rng = np.random.default_rng(5)
    M = 8
    idx = build(unit(rng, 800, 16), M=M, ef_construction=64)
    for s in range(len(idx)):
        assert len(idx.neighbors(s, 0)) <= 2 * M
        for layer in range(1, idx.level(s) + 1):
            assert len(idx.neighbors(s, layer)) <= M
        assert s not in idx.neighbors(s, 0)
    assert len(idx.reachable_from_entry(0)) == len(idx)


def test_same_seed_same_graph():
    rng = np.random.default_rng(6)
    data = unit(rng, 300, 16)
    a, b = build(data, seed=9), build(data, seed=9)
    assert a.entry_point == b.entry_point
    assert all(a.neighbors(s) == b.neighbors(s) for s in range(300))
    q = data[17]
    assert a.search(q, 5) == b.search(q, 5)


def test_growth_beyond_capacity():
    rng = np.random.default_rng(7)
    data = unit(rng, 100, 8)
    idx = HnswIndex(8, capacity=16)
    for v in data:
        idx.add(v)
    assert len(idx) == 100
    assert idx.search(data[99], 1)[0][0] == 99
