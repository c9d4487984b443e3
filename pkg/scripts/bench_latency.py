#!/usr/bin/env python3
"""Query latency of the hot and cold paths at a chosen corpus size."""

import argparse
import json
import tempfile

from tempovec.bench import latency_corpus_config, measure_latency


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--active", type=int, default=10_000)
    parser.add_argument("--superseded", type=int, default=2_000)
    parser.add_argument("--queries", type=int, default=100)
    args = parser.parse_args()

    cfg = latency_corpus_config(args.active, args.superseded)
    with tempfile.TemporaryDirectory() as tmp:
        res = measure_latency(tmp, args.queries, cfg)
    print(json.dumps({
        "active": res.active,
        "total": res.total,
        "current_ms": {"p50": round(res.current_p50, 3), "p95": round(res.current_p95, 3)},
        "as_of_ms": {"p50": round(res.as_of_p50, 3), "p95": round(res.as_of_p95, 3)},
    }, indent=2))


if __name__ == "__main__":
    main()
