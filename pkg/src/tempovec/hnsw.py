"""Hierarchical navigable small-world graph over unit vectors.

Slots are dense integers assigned in insertion order. Deletion is logical
(tombstones): a deleted slot still routes searches but never appears in
results. Distances are cosine distances ``1 - dot(a, b)``, which requires
callers to insert L2-normalized vectors.

Graph storage is flat numpy arrays so the insert and search loops can be
compiled with numba:

* layer 0 links: ``(capacity, 2M)`` int32 plus a per-node count
* upper-layer links: only nodes with level > 0 own a row in
  ``(upper_capacity, MAX_LEVEL, M)``; ``upper_row[slot]`` maps slot to row
"""

from __future__ import annotations

import heapq
import math
import threading
from dataclasses import dataclass

import numba
import numpy as np

MAX_LEVEL = 16


@dataclass(frozen=True)
class HnswParams:
    M: int = 16
    ef_construction: int = 200
    ef_search: int = 64
    seed: int = 0

    def __post_init__(self) -> None:
        if self.M < 2:
            raise ValueError("M must be >= 2")
        if self.ef_construction < 1 or self.ef_search < 1:
            raise ValueError("ef values must be positive")


@numba.njit(cache=True, fastmath=True)
def _dist(vectors, q, j):
    s = np.float32(0.0)
    v = vectors[j]
    for i in range(q.shape[0]):
        s += q[i] * v[i]
    return 1.0 - np.float64(s)


@numba.njit(cache=True)
def _neighbors(node, layer, l0, c0, up, cu, urow):
    if layer == 0:
        return l0[node, : c0[node]]
    r = urow[node]
    return up[r, layer - 1, : cu[r, layer - 1]]


@numba.njit(cache=True)
def _greedy(q, start, layer, vectors, l0, c0, up, cu, urow):
    cur = start
    cur_d = _dist(vectors, q, cur)
    changed = True
    while changed:
        changed = False
        nb = _neighbors(cur, layer, l0, c0, up, cu, urow)
        for j in nb:
            d = _dist(vectors, q, j)
            if d < cur_d:
                cur, cur_d, changed = j, d, True
    return cur


@numba.njit(cache=True)
def _search_layer(q, entry, ef, layer, skip_deleted, vectors, l0, c0, up, cu, urow, deleted, visited, tag):
    tag[0] += 1
    t = tag[0]
    cand = [(0.0, np.int64(0))]
    cand.pop()
    res = [(0.0, np.int64(0))]
    res.pop()
    for e in entry:
        d = _dist(vectors, q, e)
        visited[e] = t
        heapq.heappush(cand, (d, np.int64(e)))
        if not (skip_deleted and deleted[e]):
            heapq.heappush(res, (-d, np.int64(e)))
            if len(res) > ef:
                heapq.heappop(res)
    while len(cand) > 0:
        d, c = heapq.heappop(cand)
        if len(res) >= ef and d > -res[0][0]:
            break
        nb = _neighbors(c, layer, l0, c0, up, cu, urow)
        for n in nb:
            if visited[n] == t:
                continue
            visited[n] = t
            dn = _dist(vectors, q, n)
            if len(res) < ef or dn < -res[0][0]:
                heapq.heappush(cand, (dn, np.int64(n)))
                if skip_deleted and deleted[n]:
                    continue
                heapq.heappush(res, (-dn, np.int64(n)))
                if len(res) > ef:
                    heapq.heappop(res)
    m = len(res)
    dists = np.empty(m, dtype=np.float64)
    ids = np.empty(m, dtype=np.int64)
    for i in range(m):
        dists[i] = -res[i][0]
        ids[i] = res[i][1]
    order = np.argsort(dists, kind="mergesort")
    return dists[order], ids[order]


@numba.njit(cache=True)
def _select(dists, ids, m, vectors):
    """Diversity heuristic over candidates sorted by ascending distance.

    Keep a candidate when it is closer to the base point than to every
    neighbor kept so far; refill from the pruned ones in distance order.
    """
    n = ids.shape[0]
    if n <= m:
        return ids.copy()
    kept = np.empty(m, dtype=np.int64)
    pruned = np.empty(n, dtype=np.int64)
    nk = 0
    npr = 0
    for i in range(n):
        if nk >= m:
            break
        good = True
        for j in range(nk):
            if _dist(vectors, vectors[ids[i]], kept[j]) <= dists[i]:
                good = False
                break
        if good:
            kept[nk] = ids[i]
            nk += 1
        else:
            pruned[npr] = ids[i]
            npr += 1
    for i in range(npr):
        if nk >= m:
            break
        kept[nk] = pruned[i]
        nk += 1
    return kept[:nk]


@numba.njit(cache=True)
def _set_links(node, layer, sel, l0, c0, up, cu, urow):
    if layer == 0:
        l0[node, : sel.shape[0]] = sel
        c0[node] = sel.shape[0]
    else:
        r = urow[node]
        up[r, layer - 1, : sel.shape[0]] = sel
        cu[r, layer - 1] = sel.shape[0]


@numba.njit(cache=True)
def _connect(node, new, layer, limit, vectors, l0, c0, up, cu, urow):
    nb = _neighbors(node, layer, l0, c0, up, cu, urow)
    cnt = nb.shape[0]
    if cnt < limit:
        if layer == 0:
            l0[node, cnt] = new
            c0[node] = cnt + 1
        else:
            r = urow[node]
            up[r, layer - 1, cnt] = new
            cu[r, layer - 1] = cnt + 1
        return
    ids = np.empty(cnt + 1, dtype=np.int64)
    ids[:cnt] = nb
    ids[cnt] = new
    dists = np.empty(cnt + 1, dtype=np.float64)
    base = vectors[node]
    for i in range(cnt + 1):
        dists[i] = _dist(vectors, base, ids[i])
    order = np.argsort(dists, kind="mergesort")
    sel = _select(dists[order], ids[order], limit, vectors)
    _set_links(node, layer, sel, l0, c0, up, cu, urow)


@numba.njit(cache=True)
def _insert(slot, level, entry, max_level, M, efc, vectors, l0, c0, up, cu, urow, deleted, visited, tag):
    q = vectors[slot]
    ep = entry
    for layer in range(max_level, level, -1):
        ep = _greedy(q, ep, layer, vectors, l0, c0, up, cu, urow)
    eps = np.array([ep], dtype=np.int64)
    for layer in range(min(level, max_level), -1, -1):
        dists, ids = _search_layer(q, eps, efc, layer, False, vectors, l0, c0, up, cu, urow, deleted, visited, tag)
        sel = _select(dists, ids, M, vectors)
        _set_links(slot, layer, sel, l0, c0, up, cu, urow)
        limit = 2 * M if layer == 0 else M
        for n in sel:
            _connect(n, slot, layer, limit, vectors, l0, c0, up, cu, urow)
        eps = ids


@numba.njit(cache=True)
def _knn(q, ef, entry, max_level, vectors, l0, c0, up, cu, urow, deleted, visited, tag):
    ep = entry
    for layer in range(max_level, 0, -1):
        ep = _greedy(q, ep, layer, vectors, l0, c0, up, cu, urow)
    eps = np.array([ep], dtype=np.int64)
    return _search_layer(q, eps, ef, 0, True, vectors, l0, c0, up, cu, urow, deleted, visited, tag)


class HnswIndex:
    """Multi-layer proximity graph with tombstone deletion.

    Layer 0 keeps up to ``2 * M`` links per node, upper layers ``M``.
    Level assignment draws from a seeded generator, so inserting the same
    vectors in the same order always yields the same graph.
    """

    def __init__(self, dim: int, params: HnswParams | None = None, capacity: int = 1024):
        self.dim = dim
        self.params = params or HnswParams()
        M = self.params.M
        cap = max(capacity, 16)
        self._mult = 1.0 / math.log(M)
        self._rng = np.random.default_rng(self.params.seed)
        self._vectors = np.zeros((cap, dim), dtype=np.float32)
        self._deleted = np.zeros(cap, dtype=np.bool_)
        self._visited = np.zeros(cap, dtype=np.int64)
        self._tag = np.zeros(1, dtype=np.int64)
        self._l0 = np.zeros((cap, 2 * M), dtype=np.int32)
        self._c0 = np.zeros(cap, dtype=np.int32)
        self._urow = np.full(cap, -1, dtype=np.int64)
        self._up = np.zeros((max(cap // 8, 4), MAX_LEVEL, M), dtype=np.int32)
        self._cu = np.zeros((self._up.shape[0], MAX_LEVEL), dtype=np.int32)
        self._n_upper = 0
        self._levels: list[int] = []
        self._entry = -1
        self._max_level = -1
        self._n_deleted = 0
        # Shared by readers and the writer: searches never see a half-linked node.
        self._lock = threading.RLock()

    def __len__(self) -> int:
        return len(self._levels)

    @property
    def live_count(self) -> int:
        return len(self._levels) - self._n_deleted

    @property
    def deleted_count(self) -> int:
        return self._n_deleted

    @property
    def entry_point(self) -> int | None:
        return None if self._entry < 0 else self._entry

    def is_deleted(self, slot: int) -> bool:
        return bool(self._deleted[slot])

    def vector(self, slot: int) -> np.ndarray:
        return self._vectors[slot]

    def level(self, slot: int) -> int:
        return self._levels[slot]

    def neighbors(self, slot: int, layer: int = 0) -> list[int]:
        if layer > self._levels[slot]:
            return []
        if layer == 0:
            return self._l0[slot, : self._c0[slot]].tolist()
        r = self._urow[slot]
        return self._up[r, layer - 1, : self._cu[r, layer - 1]].tolist()

    def _grow(self) -> None:
        old = self._vectors.shape[0]
        cap = old * 2

        def widen(arr: np.ndarray, fill: int = 0) -> np.ndarray:
            out = np.full((cap,) + arr.shape[1:], fill, dtype=arr.dtype)
            out[:old] = arr
            return out

        self._vectors = widen(self._vectors)
        self._deleted = widen(self._deleted)
        self._visited = widen(self._visited)
        self._l0 = widen(self._l0)
        self._c0 = widen(self._c0)
        self._urow = widen(self._urow, -1)

    def _alloc_upper(self, slot: int) -> None:
        if self._n_upper >= self._up.shape[0]:
            rows = self._up.shape[0] * 2
            up = np.zeros((rows,) + self._up.shape[1:], dtype=np.int32)
            up[: self._up.shape[0]] = self._up
            cu = np.zeros((rows, MAX_LEVEL), dtype=np.int32)
            cu[: self._cu.shape[0]] = self._cu
            self._up, self._cu = up, cu
        self._urow[slot] = self._n_upper
        self._n_upper += 1

    def _random_level(self) -> int:
        u = self._rng.random()
        return min(int(-math.log(max(u, 1e-300)) * self._mult), MAX_LEVEL)

    def add(self, vector: np.ndarray) -> int:
        vec = np.asarray(vector, dtype=np.float32)
        if vec.shape != (self.dim,):
            raise ValueError(f"expected vector of shape ({self.dim},), got {vec.shape}")
        with self._lock:
            slot = len(self._levels)
            if slot >= self._vectors.shape[0]:
                self._grow()
            self._vectors[slot] = vec
            level = self._random_level()
            if level > 0:
                self._alloc_upper(slot)
            self._levels.append(level)
            if self._entry < 0:
                self._entry, self._max_level = slot, level
                return slot
            _insert(
                slot, level, self._entry, self._max_level, self.params.M, self.params.ef_construction,
                self._vectors, self._l0, self._c0, self._up, self._cu, self._urow,
                self._deleted, self._visited, self._tag,
            )
            if level > self._max_level:
                self._entry, self._max_level = slot, level
            return slot

    def search(self, query: np.ndarray, k: int, ef: int | None = None) -> list[tuple[int, float]]:
        """Approximate top-k live slots as ``(slot, similarity)``, best first."""
        if k < 1:
            raise ValueError("k must be >= 1")
        q = np.asarray(query, dtype=np.float32)
        if q.shape != (self.dim,):
            raise ValueError(f"expected query of shape ({self.dim},), got {q.shape}")
        with self._lock:
            ef = max(ef or self.params.ef_search, k)
            if self.live_count == 0:
                return []
            if self.live_count <= ef:
                return self.exact(q, k)
            dists, ids = _knn(
                q, ef, self._entry, self._max_level,
                self._vectors, self._l0, self._c0, self._up, self._cu, self._urow,
                self._deleted, self._visited, self._tag,
            )
            return [(int(s), 1.0 - float(d)) for d, s in zip(dists[:k], ids[:k])]

    def exact(self, query: np.ndarray, k: int) -> list[tuple[int, float]]:
        """Brute-force top-k over live slots."""
        with self._lock:
            n = len(self._levels)
            live = np.flatnonzero(~self._deleted[:n])
            sims = self._vectors[live] @ np.asarray(query, dtype=np.float32)
            order = np.argsort(-sims, kind="stable")[:k]
            return [(int(live[i]), float(sims[i])) for i in order]

    def mark_deleted(self, slot: int) -> None:
        with self._lock:
            if slot < 0 or slot >= len(self._levels):
                raise IndexError(f"slot {slot} out of range")
            if not self._deleted[slot]:
                self._deleted[slot] = True
                self._n_deleted += 1

    def reachable_from_entry(self, layer: int = 0) -> set[int]:
        """Slots reachable from the entry point following links on `layer`."""
        if self._entry < 0:
            return set()
        seen = {self._entry}
        stack = [self._entry]
        while stack:
            node = stack.pop()
            for n in self.neighbors(node, layer):
                if n not in seen:
                    seen.add(n)
                    stack.append(n)
        return seen
