"""Command-line interface: ``tempovec <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 store error, 3 tiers diverge (verify).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass
from datetime import datetime
from pathlib import Path
from typing import Sequence

from .change_detection import HashStoreError, detect_changes
from .chunking import load_document
from .cold_tier import ColdTierError
from .embedding import EmbeddingError, Provider
from .framing import CorruptLogError
from .hot_tier import HotTierError
from .pipeline import IngestError, Pipeline
from .query_engine import Hit, QueryEngine, QueryResult
from .store import Store, StoreConfig, StoreError
from .transactions import TransactionError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_STORE = 2
EXIT_DIVERGED = 3

DATA_DIR_ENV = "TEMPOVEC_DATA_DIR"


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class CliConfig:
    data_dir: Path
    embed_provider: Provider = Provider.DETERMINISTIC
    embed_endpoint: str | None = None
    dimension: int = 384
    ef_search: int = 64
    reconcile_interval_ms: int = 500
    output_format: str = "human"

    def store_config(self) -> StoreConfig:
        return StoreConfig(
            dimension=self.dimension,
            provider=self.embed_provider,
            embed_endpoint=self.embed_endpoint,
            ef_search=self.ef_search,
            reconcile_interval_ms=self.reconcile_interval_ms,
        )


def parse_ts(value: str) -> int:
    """Integer milliseconds since the epoch, or an RFC3339 timestamp."""
    value = value.strip()
    try:
        return int(value)
    except ValueError:
        pass
    text = value[:-1] + "+00:00" if value.endswith(("Z", "z")) else value
    try:
        dt = datetime.fromisoformat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"malformed timestamp: {value!r}") from None
    if dt.tzinfo is None:
        raise argparse.ArgumentTypeError(f"timestamp needs a UTC offset: {value!r}")
    return round(dt.timestamp() * 1000)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--data-dir", default="./tempovec-data",
                        help=f"store directory (env {DATA_DIR_ENV} overrides)")
    common.add_argument("--format", choices=("human", "json"), default="human", dest="output_format")
    common.add_argument("--dimension", type=int, default=None,
                        help="embedding dimension (defaults to the stored value, else 384)")
    common.add_argument("--embed-provider", choices=[p.value for p in Provider], default="deterministic")
    common.add_argument("--embed-endpoint", default=None)
    common.add_argument("--ef-search", type=int, default=64)
    common.add_argument("--reconcile-interval-ms", type=int, default=500)

    parser = _Parser(prog="tempovec", description="Temporal vector store over versioned documents")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    p = sub.add_parser("ingest", parents=[common], help="ingest one document version")
    p.add_argument("path")
    p.add_argument("--doc-id", required=True)
    p.add_argument("--ts", type=parse_ts, default=None)

    p = sub.add_parser("query", parents=[common], help="search current content")
    p.add_argument("text")
    p.add_argument("-k", type=int, default=5)

    p = sub.add_parser("query-asof", parents=[common], help="search content valid at a timestamp")
    p.add_argument("text")
    p.add_argument("--ts", type=parse_ts, required=True)
    p.add_argument("-k", type=int, default=5)

    p = sub.add_parser("query-range", parents=[common], help="compare results at two timestamps")
    p.add_argument("text")
    p.add_argument("--from", dest="start", type=parse_ts, required=True)
    p.add_argument("--to", dest="end", type=parse_ts, required=True)
    p.add_argument("-k", type=int, default=5)

    p = sub.add_parser("timeline", parents=[common], help="per-version change counts of a document")
    p.add_argument("--doc-id", required=True)

    p = sub.add_parser("diff", parents=[common], help="compare two stored versions of a document")
    p.add_argument("--doc-id", required=True)
    p.add_argument("--v1", type=int, required=True)
    p.add_argument("--v2", type=int, required=True)

    sub.add_parser("stats", parents=[common], help="hot and cold tier counts")
    sub.add_parser("reconcile", parents=[common], help="resolve in-flight transactions")
    sub.add_parser("verify", parents=[common], help="check hot tier against the cold snapshot")
    sub.add_parser("compact", parents=[common], help="rebuild the hot index without tombstones")
    return parser


WRITERS = {"ingest", "reconcile", "compact"}


def _config(args: argparse.Namespace) -> CliConfig:
    data_dir = Path(os.environ.get(DATA_DIR_ENV) or args.data_dir)
    dim = args.dimension
    if dim is None:
        dim = Store.stored_dimension(data_dir) or 384
    return CliConfig(
        data_dir=data_dir,
        embed_provider=Provider(args.embed_provider),
        embed_endpoint=args.embed_endpoint,
        dimension=dim,
        ef_search=args.ef_search,
        reconcile_interval_ms=args.reconcile_interval_ms,
        output_format=args.output_format,
    )


def _window(valid_from: int, valid_to: int | None) -> str:
    return f"[{valid_from}, {'now' if valid_to is None else valid_to})"


def _print_hits(result: QueryResult, fmt: str, out, label: str | None = None) -> None:
    if fmt == "json":
        for rank, h in enumerate(result.hits, start=1):
            row = asdict(h)
            row["rank"] = rank
            if label:
                row["endpoint"] = label
            out.write(json.dumps(row, sort_keys=True) + "\n")
        return
    if label:
        out.write(f"== {label} ==\n")
    if not result.hits:
        out.write("no results\n")
        return
    for rank, h in enumerate(result.hits, start=1):
        out.write(f"{rank:>3}  {h.similarity:.4f}  {h.doc_id}:{h.position}  "
                  f"{_window(h.valid_from, h.valid_to)}  {_snippet(h)}\n")


def _snippet(h: Hit, width: int = 72) -> str:
    text = " ".join(h.content.split())
    return text if len(text) <= width else text[: width - 3] + "..."


def _emit(obj: dict, fmt: str, out) -> None:
    if fmt == "json":
        out.write(json.dumps(obj, sort_keys=True) + "\n")
    else:
        out.write(" ".join(f"{k}={_fmt(v)}" for k, v in obj.items()) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def diff_versions(store: Store, doc_id: str, v1: int, v2: int) -> list[tuple[int, str]]:
    """Per-position classification between two stored document versions."""
    old = store.cold.document_state(doc_id, v1)
    new = store.cold.document_state(doc_id, v2)
    changes = detect_changes([r.chunk_id for r in old], [r.chunk_id for r in new])
    rows = [(pos, "added") for pos, _ in changes.new]
    rows += [(pos, "modified") for pos, _, _ in changes.modified]
    rows += [(pos, "removed") for pos, _ in changes.deleted]
    rows += [(new_pos, f"moved from {old_pos}") for old_pos, new_pos, _ in changes.moved]
    return sorted(rows)


def _run(args: argparse.Namespace, out) -> int:
    cfg = _config(args)
    fmt = cfg.output_format
    cmd = args.command
    writer = cmd in WRITERS
    if not writer and not (cfg.data_dir / "meta.json").exists():
        if cmd in ("query", "query-asof", "query-range"):
            # nothing ingested yet
            if fmt == "human":
                out.write("no results\n")
            return EXIT_OK
        if cmd == "stats":
            zeros = {"hot_active": 0, "hot_tombstones": 0, "cold_total": 0, "cold_active": 0,
                     "chunk_versions": 0, "txn_count": 0, "hot_reduction_pct": 0.0}
            _emit(zeros, fmt, out)
            return EXIT_OK
        raise StoreError(f"{cfg.data_dir}: not an initialized data directory")

    with Store(cfg.data_dir, cfg.store_config(), writer=writer) as store:
        if not writer:
            store.refresh()
        engine = QueryEngine(store)

        if cmd == "ingest":
            doc = load_document(args.path, args.doc_id)
            summary = Pipeline(store).ingest_document(doc, args.ts)
            row = summary.to_dict()
            row["changed"] = summary.changed
            _emit(row, fmt, out)
        elif cmd == "query":
            _print_hits(engine.query_current(args.text, args.k), fmt, out)
        elif cmd == "query-asof":
            _print_hits(engine.query_as_of(args.text, args.ts, args.k), fmt, out)
        elif cmd == "query-range":
            if args.start >= args.end:
                raise UsageError("--from must precede --to")
            res = engine.query_range(args.text, args.start, args.end, args.k)
            _print_hits(res.at_start, fmt, out, f"from {args.start}")
            _print_hits(res.at_end, fmt, out, f"to {args.end}")
            if fmt == "human":
                out.write(f"only at start: {len(res.only_start)}  only at end: {len(res.only_end)}  "
                          f"both: {len(res.both)}\n")
        elif cmd == "timeline":
            rows = store.cold.document_timeline(args.doc_id)
            if not rows:
                raise ColdTierError(f"unknown document: {args.doc_id}")
            for e in rows:
                _emit(asdict(e), fmt, out)
        elif cmd == "diff":
            rows = diff_versions(store, args.doc_id, args.v1, args.v2)
            if fmt == "json":
                for pos, what in rows:
                    out.write(json.dumps({"position": pos, "change": what}) + "\n")
            elif not rows:
                out.write("no changes\n")
            else:
                for pos, what in rows:
                    out.write(f"position {pos}: {what}\n")
        elif cmd == "stats":
            hot, cold = store.hot.stats(), store.cold.stats()
            total = cold.chunk_versions
            _emit({
                "hot_active": hot.active_count,
                "hot_tombstones": hot.tombstone_count,
                "cold_total": cold.total_records,
                "cold_active": cold.active_records,
                "chunk_versions": total,
                "txn_count": cold.txn_count,
                "cold_bytes": cold.bytes_on_disk,
                "hot_reduction_pct": 100.0 * (1 - hot.active_count / total) if total else 0.0,
            }, fmt, out)
        elif cmd == "reconcile":
            _emit(asdict(store.last_reconcile or store.reconcile()), fmt, out)
        elif cmd == "verify":
            report = store.txm.verify_tiers()
            for side, rows in (("only_hot", report.only_hot), ("only_cold", report.only_cold)):
                for doc_id, pos, cid in rows:
                    _emit({"side": side, "doc_id": doc_id, "position": pos, "chunk_id": cid}, fmt, out)
            if fmt == "human":
                out.write("consistent\n" if report.consistent else f"{len(report)} divergent records\n")
            return EXIT_OK if report.consistent else EXIT_DIVERGED
        elif cmd == "compact":
            before = store.hot.stats().tombstone_count
            store.hot.compact(force=True)
            _emit({"tombstones_removed": before}, fmt, out)
    return EXIT_OK


STORE_ERRORS = (
    StoreError, IngestError, TransactionError, ColdTierError, HotTierError,
    HashStoreError, CorruptLogError, EmbeddingError, OSError,
)


def main(argv: Sequence[str] | None = None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(err)
            return EXIT_USAGE
        return _run(args, out)
    except (UsageError, argparse.ArgumentTypeError, ValueError) as exc:
        err.write(f"tempovec: usage error: {exc}\n")
        return EXIT_USAGE
    except STORE_ERRORS as exc:
        err.write(f"tempovec: error: {exc}\n")
        return EXIT_STORE


if __name__ == "__main__":
    sys.exit(main())
