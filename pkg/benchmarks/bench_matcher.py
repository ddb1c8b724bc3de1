#!/usr/bin/env python3
"""Benchmark the compiled corpus-scan kernel against the pure-Python fallback.

Generates a synthetic caption corpus, builds one automaton over the requested
number of labels, and times a full counting pass per kernel.

    python benchmarks/bench_matcher.py --size-mb 10 --labels 500
"""

from __future__ import annotations

import argparse
import random
import tempfile
import time
from pathlib import Path

from vltaboo import _matcher
from vltaboo.corpus import build_matcher_for_labels, count_corpus


def generate_corpus(path: Path, size_mb: float, n_labels: int, seed: int = 0) -> list[str]:
    rng = random.Random(seed)
    vocabulary = [
        "".join(rng.choice("abcdefghijklmnopqrstuvwxyz") for _ in range(rng.randint(3, 9)))
        for _ in range(3000)
    ]
    labels = sorted(set(rng.sample(vocabulary, n_labels)))
    suffixes = ["", ".", "!", ",", ";", "s", "es."]
    target = int(size_mb * 1024 * 1024)
    size = 0
    with path.open("w", encoding="utf-8") as fh:
        while size < target:
            line = " ".join(
                rng.choice(vocabulary) + rng.choice(suffixes)
                for _ in range(rng.randint(3, 12))
            )
            fh.write(line + "\n")
            size += len(line) + 1
    return labels


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--size-mb", type=float, default=10.0)
    parser.add_argument("--labels", type=int, default=500)
    parser.add_argument("--shards", type=int, default=1)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        corpus = Path(tmp) / "corpus.txt"
        labels = generate_corpus(corpus, args.size_mb, args.labels)
        size_mb = corpus.stat().st_size / (1024 * 1024)
        print(f"corpus: {size_mb:.1f} MB, {len(labels)} labels")

        build_start = time.perf_counter()
        matcher = build_matcher_for_labels(labels)
        print(
            f"automaton: {matcher.automaton.n_states} states, "
            f"{matcher.automaton.n_classes} byte classes, "
            f"built in {time.perf_counter() - build_start:.2f}s"
        )

        kernels = ["python"]
        if _matcher.KERNEL == "compiled":
            kernels.insert(0, "compiled")
        else:
            print("note: compiled kernel not built; timing fallback only")

        results: dict[str, float] = {}
        reference = None
        for kernel in kernels:
            best = float("inf")
            for _ in range(args.repeats):
                start = time.perf_counter()
                table = count_corpus(matcher, corpus, shards=args.shards, kernel=kernel)
                best = min(best, time.perf_counter() - start)
            results[kernel] = best
            if reference is None:
                reference = table
            elif table != reference:
                raise SystemExit(f"kernel {kernel} disagrees with {kernels[0]}")
            print(f"{kernel:>9}: {best:6.3f}s  ({size_mb / best:7.1f} MB/s)")

        if len(results) == 2:
            print(f"speedup: {results['python'] / results['compiled']:.1f}x "
                  f"(results identical)")


if __name__ == "__main__":
    main()
