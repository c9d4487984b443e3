"""Query routing by temporal intent.

Current queries go to the hot tier's ANN index. Point-in-time queries go to
the cold tier: the snapshot is filtered on validity first, then ranked by
exact cosine similarity. Range queries evaluate both endpoints and diff them.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from enum import Enum

from .cold_tier import ColdRecord
from .hot_tier import HotRecord
from .store import Store


class Route(str, Enum):
    HOT = "hot"
    COLD = "cold"
    BOTH = "both"


@dataclass(frozen=True)
class Current:
    pass


@dataclass(frozen=True)
class AsOf:
    target_ts: int


@dataclass(frozen=True)
class Range:
    start_ts: int
    end_ts: int

    def __post_init__(self) -> None:
        if not self.start_ts < self.end_ts:
            raise ValueError(f"range start {self.start_ts} must precede end {self.end_ts}")


Temporal = Current | AsOf | Range


@dataclass(frozen=True)
class QuerySpec:
    text: str
    k: int = 5
    temporal: Temporal = field(default_factory=Current)

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass(frozen=True)
class Hit:
    chunk_id: str
    doc_id: str
    position: int
    content: str
    similarity: float
    valid_from: int
    valid_to: int | None
    version_number: int | None
    tier: str

    @classmethod
    def from_hot(cls, rec: HotRecord, sim: float) -> "Hit":
        return cls(rec.chunk_id, rec.doc_id, rec.position, rec.content, sim, rec.valid_from, None, None, "hot")

    @classmethod
    def from_cold(cls, rec: ColdRecord, sim: float) -> "Hit":
        return cls(
            rec.chunk_id, rec.doc_id, rec.position, rec.content, sim,
            rec.valid_from, rec.valid_to, rec.version_number, "cold",
        )

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class QueryResult:
    hits: list[Hit]
    route: Route
    as_of_ts: int | None = None

    def __len__(self) -> int:
        return len(self.hits)

    def chunk_ids(self) -> list[str]:
        return [h.chunk_id for h in self.hits]


@dataclass
class RangeResult:
    at_start: QueryResult
    at_end: QueryResult
    only_start: list[str]
    only_end: list[str]
    both: list[str]


def classify(spec: QuerySpec) -> Route:
    if isinstance(spec.temporal, AsOf):
        return Route.COLD
    if isinstance(spec.temporal, Range):
        return Route.BOTH
    return Route.HOT


class QueryEngine:
    def __init__(self, store: Store):
        self.store = store

    def query_current(self, text: str, k: int = 5) -> QueryResult:
        q = self.store.embedder.embed(text)
        hits = [Hit.from_hot(r, s) for r, s in self.store.hot.search(q, k)]
        return QueryResult(hits, Route.HOT)

    def query_as_of(self, text: str, target_ts: int, k: int = 5) -> QueryResult:
        q = self.store.embedder.embed(text)
        hits = [Hit.from_cold(r, s) for r, s in self.store.cold.search_as_of(q, target_ts, k)]
        return QueryResult(hits, Route.COLD, target_ts)

    def query_range(self, text: str, start_ts: int, end_ts: int, k: int = 5) -> RangeResult:
        Range(start_ts, end_ts)
        at_start = self.query_as_of(text, start_ts, k)
        latest = self.store.cold.latest_commit_ts
        if latest is not None and end_ts >= latest:
            at_end = self.query_current(text, k)
            at_end.as_of_ts = end_ts
        else:
            at_end = self.query_as_of(text, end_ts, k)
        a, b = set(at_start.chunk_ids()), set(at_end.chunk_ids())
        return RangeResult(at_start, at_end, sorted(a - b), sorted(b - a), sorted(a & b))

    def run(self, spec: QuerySpec) -> QueryResult | RangeResult:
        route = classify(spec)
        if route is Route.HOT:
            return self.query_current(spec.text, spec.k)
        if route is Route.COLD:
            assert isinstance(spec.temporal, AsOf)
            return self.query_as_of(spec.text, spec.temporal.target_ts, spec.k)
        assert isinstance(spec.temporal, Range)
        return self.query_range(spec.text, spec.temporal.start_ts, spec.temporal.end_ts, spec.k)
