"""Synthetic versioned corpora with a ledger of every scripted change.

Each paragraph carries a unique serial token, so no two paragraphs ever
normalize to the same text. That keeps the expected change classification
computable from the script alone.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

from .change_detection import ChangeSet
from .chunking import hash_chunk, normalize

VOCAB = (
    "replica shard ledger cache index vector tenant region cluster latency quorum "
    "snapshot schema policy gateway token audit retention backup failover lease "
    "partition checkpoint throughput budget review owner release rollout migration "
    "storage compute network queue stream batch window metric alert incident "
    "contract invoice customer supplier warehouse inventory shipment forecast "
    "revenue margin pricing discount renewal clause liability warranty notice"
).split()

BASE_TS = 1_700_000_000_000
DAY_MS = 86_400_000


@dataclass(frozen=True)
class CorpusConfig:
    n_docs: int = 100
    n_versions: int = 5
    min_paragraphs: int = 20
    max_paragraphs: int = 28
    min_rate: float = 0.10
    max_rate: float = 0.15
    # share of embedded changes that are inserts (each paired with a delete)
    insert_share: float = 0.25
    seed: int = 7


@dataclass(frozen=True)
class VersionLedger:
    doc_id: str
    version: int
    ts: int
    n_paragraphs: int
    edits: int
    inserts: int
    deletes: int

    @property
    def expected_embeddings(self) -> int:
        return self.n_paragraphs if self.version == 1 else self.edits + self.inserts

    @property
    def scripted_rate(self) -> float:
        return self.expected_embeddings / self.n_paragraphs


@dataclass
class Corpus:
    config: CorpusConfig
    # (doc_id, version, ts, text) in ingest order
    documents: list[tuple[str, int, int, str]] = field(default_factory=list)
    ledger: list[VersionLedger] = field(default_factory=list)

    def non_first(self) -> list[VersionLedger]:
        return [v for v in self.ledger if v.version > 1]

    @property
    def scripted_change_rate(self) -> float:
        rest = self.non_first()
        return sum(v.scripted_rate for v in rest) / len(rest) if rest else 0.0

    def final_texts(self) -> dict[str, str]:
        return {doc_id: text for doc_id, _, _, text in self.documents}

    def write(self, directory: str | Path) -> Path:
        """Write each version as markdown plus manifest.jsonl and ledger.jsonl."""
        root = Path(directory)
        root.mkdir(parents=True, exist_ok=True)
        rows = []
        for doc_id, version, ts, text in self.documents:
            rel = Path("docs") / doc_id / f"v{version}.md"
            (root / rel).parent.mkdir(parents=True, exist_ok=True)
            (root / rel).write_text(text, encoding="utf-8")
            rows.append(json.dumps({"doc_id": doc_id, "path": str(rel), "ts": ts}))
        manifest = root / "manifest.jsonl"
        manifest.write_text("\n".join(rows) + "\n", encoding="utf-8")
        (root / "ledger.jsonl").write_text(
            "".join(json.dumps(asdict(v)) + "\n" for v in self.ledger), encoding="utf-8"
        )
        return manifest


class _Writer:
    """Produces fresh paragraphs; the serial token makes each one unique."""

    def __init__(self, rng: random.Random, prefix: str):
        self.rng = rng
        self.prefix = prefix
        self.serial = 0

    def paragraph(self) -> str:
        self.serial += 1
        n = self.rng.randint(12, 30)
        words = [self.rng.choice(VOCAB) for _ in range(n)]
        words[0] = words[0].capitalize()
        words.insert(self.rng.randrange(1, n), f"{self.prefix}s{self.serial}")
        return " ".join(words) + "."


def render(paragraphs: list[str]) -> str:
    return "\n\n".join(paragraphs) + "\n"


def generate_corpus(config: CorpusConfig | None = None) -> Corpus:
    cfg = config or CorpusConfig()
    rng = random.Random(cfg.seed)
    corpus = Corpus(cfg)
    docs: dict[str, list[str]] = {}
    writers: dict[str, _Writer] = {}

    for version in range(1, cfg.n_versions + 1):
        for i in range(cfg.n_docs):
            doc_id = f"doc-{i:03d}"
            ts = BASE_TS + (version - 1) * DAY_MS + i * 1000
            if version == 1:
                writers[doc_id] = _Writer(random.Random(rng.random()), f"d{i}")
                paras = [writers[doc_id].paragraph()
                         for _ in range(rng.randint(cfg.min_paragraphs, cfg.max_paragraphs))]
                edits = inserts = deletes = 0
            else:
                paras, edits, inserts, deletes = _mutate(docs[doc_id], writers[doc_id], rng, cfg)
            docs[doc_id] = paras
            corpus.documents.append((doc_id, version, ts, render(paras)))
            corpus.ledger.append(VersionLedger(doc_id, version, ts, len(paras), edits, inserts, deletes))
    return corpus


def _mutate(paras: list[str], writer: _Writer, rng: random.Random, cfg: CorpusConfig):
    n = len(paras)
    lo = max(1, math.ceil(cfg.min_rate * n))
    hi = max(lo, math.floor(cfg.max_rate * n))
    touched = rng.randint(lo, hi)
    inserts = sum(rng.random() < cfg.insert_share for _ in range(touched))
    edits = touched - inserts
    deletes = inserts

    out = list(paras)
    for pos in rng.sample(range(n), edits):
        out[pos] = writer.paragraph()
    # delete only paragraphs that were not just edited
    fresh = set(out) - set(paras)
    victims = rng.sample([p for p in range(n) if out[p] not in fresh], deletes)
    out = [p for idx, p in enumerate(out) if idx not in set(victims)]
    for _ in range(inserts):
        out.insert(rng.randint(0, len(out)), writer.paragraph())
    return out, edits, inserts, deletes


# Single-mutation script: one change per case, expected ChangeSet derived
# from the operation itself rather than from the matching algorithm.


class MutationKind(str, Enum):
    EDIT = "edit"
    INSERT = "insert"
    DELETE = "delete"
    MOVE = "move"
    NOOP = "noop"


@dataclass(frozen=True)
class Mutation:
    kind: MutationKind
    before: tuple[str, ...]
    after: tuple[str, ...]
    expected: ChangeSet


def _ids(paras) -> list[str]:
    return [hash_chunk(normalize(p)) for p in paras]


def expected_changes(before: list[str], kind: MutationKind, i: int = 0, j: int = 0,
                     after: list[str] | None = None) -> ChangeSet:
    """Expected classification for one scripted operation on distinct paragraphs.

    edit i: position i modified. insert at i: i is new, old i.. shift by one.
    delete i: old i deleted, old i+1.. shift back. move i -> j: every position
    between the two endpoints is a move. noop: everything unchanged.
    """
    old = _ids(before)
    new = _ids(after) if after is not None else None
    n = len(old)
    cs = ChangeSet()
    if kind is MutationKind.NOOP:
        cs.unchanged = list(enumerate(old))
    elif kind is MutationKind.EDIT:
        cs.unchanged = [(p, h) for p, h in enumerate(old) if p != i]
        cs.modified = [(i, old[i], new[i])]
    elif kind is MutationKind.INSERT:
        cs.unchanged = [(p, old[p]) for p in range(i)]
        cs.moved = [(p, p + 1, old[p]) for p in range(i, n)]
        cs.new = [(i, new[i])]
    elif kind is MutationKind.DELETE:
        cs.unchanged = [(p, old[p]) for p in range(i)]
        cs.moved = [(p, p - 1, old[p]) for p in range(i + 1, n)]
        cs.deleted = [(i, old[i])]
    elif kind is MutationKind.MOVE:
        lo, hi = min(i, j), max(i, j)
        cs.unchanged = [(p, old[p]) for p in range(n) if p < lo or p > hi]
        order = list(range(n))
        order.insert(j, order.pop(i))
        cs.moved = sorted(((q, p, old[q]) for p, q in enumerate(order) if lo <= p <= hi),
                          key=lambda t: t[1])
    cs.unchanged.sort()
    return cs


def mutation_script(n_cases: int = 200, seed: int = 11) -> list[Mutation]:
    """Cycle through every mutation kind on freshly generated documents."""
    rng = random.Random(seed)
    kinds = list(MutationKind)
    out = []
    for case in range(n_cases):
        writer = _Writer(random.Random(rng.random()), f"m{case}")
        before = [writer.paragraph() for _ in range(rng.randint(3, 12))]
        n = len(before)
        kind = kinds[case % len(kinds)]
        i = rng.randrange(n)
        j = i
        after = list(before)
        if kind is MutationKind.EDIT:
            after[i] = writer.paragraph()
        elif kind is MutationKind.INSERT:
            i = rng.randint(0, n)
            after.insert(i, writer.paragraph())
        elif kind is MutationKind.DELETE:
            del after[i]
        elif kind is MutationKind.MOVE:
            j = rng.choice([x for x in range(n) if x != i])
            after.insert(j, after.pop(i))
        else:
            # cosmetic changes that normalize away
            p = after[i]
            after[i] = rng.choice([p.upper(), "  " + p.replace(" ", "   ") + "  ", p.replace(" ", "\t")])
        cs = expected_changes(before, kind, i, j, after)
        out.append(Mutation(kind, tuple(before), tuple(after), cs))
    return out
