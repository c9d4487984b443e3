#!/usr/bin/env python3
"""Write the synthetic versioned corpus, its manifest and change ledger to a directory."""

import argparse

from tempovec.corpus import CorpusConfig, generate_corpus


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out", help="output directory")
    parser.add_argument("--docs", type=int, default=100)
    parser.add_argument("--versions", type=int, default=5)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    corpus = generate_corpus(CorpusConfig(n_docs=args.docs, n_versions=args.versions, seed=args.seed))
    manifest = corpus.write(args.out)
    print(f"wrote {len(corpus.documents)} document versions")
    print(f"manifest: {manifest}")
    print(f"scripted change rate: {corpus.scripted_change_rate:.4f}")


if __name__ == "__main__":
    main()
