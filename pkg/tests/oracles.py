"""Independent reference models used by the tests."""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import numpy as np

from tempovec.cold_tier import (
    ChangeType, ColdRecord, ColdTier, DeleteEvent, InsertEvent, Status, SupersedeEvent,
)

DIM = 8


@dataclass
class Script:
    """Appended transactions as plain tuples, plus the compensated versions."""

    txns: list[tuple[int, int, list]] = field(default_factory=list)
    compensated: set[int] = field(default_factory=set)


def _vec(rng: random.Random) -> np.ndarray:
    v = np.array([rng.gauss(0, 1) for _ in range(DIM)], dtype=np.float32)
    return v / np.linalg.norm(v)


def random_history(cold: ColdTier, rng: random.Random, max_events: int = 50) -> Script:
    """Append a random valid event sequence to `cold`; return what was written."""
    script = Script()
    active: dict[tuple[str, int], tuple[str, int, int]] = {}  # key -> (chunk_id, version, valid_from)
    ts = 1000
    budget = rng.randint(1, max_events)
    serial = 0
    last_data: tuple[int, dict] | None = None
    while budget > 0:
        if last_data and rng.random() < 0.1:
            version, before = last_data
            cold.compensate(version)
            script.txns.append((cold.latest_version, cold.latest_commit_ts, []))
            script.compensated.add(version)
            active = before
            last_data = None
            continue
        ts += rng.choice([0, 1, 1, 2, 5])
        before = dict(active)
        events = []
        used: set[tuple[str, int]] = set()
        for _ in range(min(budget, rng.randint(1, 4))):
            key = (rng.choice("ab"), rng.randrange(4))
            if key in used:
                continue
            used.add(key)
            cur = active.get(key)
            serial += 1
            cid = f"c{serial}"
            if cur is None:
                rec = ColdRecord(cid, _vec(rng), key[0], key[1], ts, f"text {cid}")
                events.append(InsertEvent(rec))
                active[key] = (cid, 1, ts)
            elif cur[2] >= ts:
                continue
            elif rng.random() < 0.3:
                events.append(DeleteEvent(key[0], key[1], cur[0], ts))
                del active[key]
            else:
                events.append(SupersedeEvent(key[0], key[1], cur[0], ts))
                rec = ColdRecord(cid, _vec(rng), key[0], key[1], ts, f"text {cid}", None,
                                 Status.ACTIVE, cur[1] + 1, cur[0], ChangeType.UPDATE)
                events.append(InsertEvent(rec))
                active[key] = (cid, cur[1] + 1, ts)
        if not events:
            continue
        budget -= len(events)
        # closes before inserts, as the pipeline orders them
        events.sort(key=lambda e: isinstance(e, InsertEvent))
        version = cold.append(events, ts)
        script.txns.append((version, ts, events))
        last_data = (version, before)
    return script


def replay(script: Script, upto: int | None = None) -> list[dict]:
    """Every record produced by the visible transactions, with its closing info."""
    records: list[dict] = []
    for version, _, events in script.txns:
        if upto is not None and version > upto:
            break
        if version in script.compensated:
            continue
        for ev in events:
            if isinstance(ev, InsertEvent):
                r = ev.record
                records.append({
                    "doc_id": r.doc_id, "position": r.position, "chunk_id": r.chunk_id,
                    "valid_from": r.valid_from, "valid_to": None, "status": "active",
                    "version_number": r.version_number, "parent_hash": r.parent_hash,
                    "change_type": ChangeType(r.change_type).value, "content": r.content,
                })
            else:
                for rec in records:
                    if (rec["doc_id"], rec["position"], rec["chunk_id"]) == (
                        ev.doc_id, ev.position, ev.old_chunk_id
                    ) and rec["valid_to"] is None:
                        rec["valid_to"] = ev.valid_to
                        rec["status"] = "superseded" if isinstance(ev, SupersedeEvent) else "deleted"
    return records


def _ident(r: dict) -> tuple:
    return (r["doc_id"], r["position"], r["chunk_id"], r["valid_from"], r["valid_to"], r["status"],
            r["version_number"], r["parent_hash"], r["change_type"], r["content"])


def oracle_as_of(script: Script, ts: int) -> list[tuple]:
    rows = [r for r in replay(script) if r["valid_from"] <= ts and (r["valid_to"] is None or ts < r["valid_to"])]
    return sorted(_ident(r) for r in rows)


def oracle_at_version(script: Script, version: int) -> list[tuple]:
    rows = [r for r in replay(script, version) if r["valid_to"] is None]
    return sorted(_ident(r) for r in rows)


def view_idents(view) -> list[tuple]:
    return sorted(r.identity() for r in view.records)
