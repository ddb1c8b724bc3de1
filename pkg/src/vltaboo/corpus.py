"""Class-occurrence census over a caption corpus.

Each class label (or each of its comma-separated synonyms) expands into 24
boundary-delimited search terms: a leading space, the label or its "s"/"es"
plural, and one of eight closing suffixes (punctuation or space). A single
multi-pattern automaton pass over the corpus counts, per label, how many
samples contain at least one term and how many term occurrences there are in
total. Captions are matched as " " + caption + " " so labels at the very start
or end of a caption still carry their boundary.

Matching is byte-level and, by default, ASCII case-folded on both sides.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from ._matcher import KERNEL, ChunkScanner, build_flat_automaton

SUFFIXES = (".", "!", "?", ":", " ", ",", ";", "-")
PLURAL_FORMS = ("", "s", "es")
TERMS_PER_SYNONYM = len(PLURAL_FORMS) * len(SUFFIXES)  # 24

_CHUNK_BYTES = 4 << 20

_ASCII_FOLD = bytes(b + 32 if 65 <= b <= 90 else b for b in range(256))
_IDENTITY_FOLD = bytes(range(256))


class CorpusError(ValueError):
    """Raised for invalid labels or unreadable corpus inputs."""


@dataclass(frozen=True)
class SearchTermSet:
    """All boundary-delimited byte patterns generated for one class label."""

    label: str
    synonyms: tuple[str, ...]
    terms: tuple[bytes, ...]


def generate_terms(label: str, case_sensitive: bool = False) -> SearchTermSet:
    """Expand a label into its 24-per-synonym search terms.

    Synonym lists like "tub, vat" split on ", "; plurals append to the whole
    synonym (multi-word labels included), never to individual tokens.
    """
    if not label.strip():
        raise CorpusError("empty class label")
    synonyms = tuple(s for s in label.split(", "))
    fold = _IDENTITY_FOLD if case_sensitive else _ASCII_FOLD
    terms: list[bytes] = []
    for synonym in synonyms:
        if not synonym.strip():
            raise CorpusError(f"label {label!r} contains an empty synonym")
        base = synonym.encode("utf-8").translate(fold)
        for plural in PLURAL_FORMS:
            for suffix in SUFFIXES:
                terms.append(b" " + base + plural.encode() + suffix.encode())
    return SearchTermSet(label=label, synonyms=synonyms, terms=tuple(terms))


class Matcher:
    """One automaton over every term of every label, ready to scan corpora."""

    def __init__(self, term_sets: Sequence[SearchTermSet], case_sensitive: bool = False):
        if not term_sets:
            raise CorpusError("no search terms supplied")
        self.labels = tuple(ts.label for ts in term_sets)
        self.case_sensitive = case_sensitive
        self.fold = _IDENTITY_FOLD if case_sensitive else _ASCII_FOLD
        patterns: list[tuple[bytes, int]] = []
        seen: set[tuple[bytes, int]] = set()
        for label_id, ts in enumerate(term_sets):
            for term in ts.terms:
                key = (term, label_id)
                if key not in seen:  # identical synonyms collapse
                    seen.add(key)
                    patterns.append(key)
        self.automaton = build_flat_automaton(patterns, n_labels=len(self.labels))
        self.kernel = KERNEL

    def scanner(self, kernel: str | None = None) -> ChunkScanner:
        return ChunkScanner(self.automaton, self.fold, kernel=kernel)


def build_automaton(
    term_sets: Sequence[SearchTermSet], case_sensitive: bool = False
) -> Matcher:
    return Matcher(term_sets, case_sensitive=case_sensitive)


def build_matcher_for_labels(
    labels: Sequence[str], case_sensitive: bool = False
) -> Matcher:
    return Matcher(
        [generate_terms(label, case_sensitive=case_sensitive) for label in labels],
        case_sensitive=case_sensitive,
    )


@dataclass(frozen=True)
class OccurrenceTable:
    """Per-label corpus statistics from one counting pass."""

    labels: tuple[str, ...]
    samples_matched: tuple[int, ...]
    term_hits: tuple[int, ...]
    corpus_size: int
    undecodable: int

    def occurrence(self, label: str) -> int:
        return self.samples_matched[self.labels.index(label)]

    def as_mapping(self) -> dict[str, int]:
        return dict(zip(self.labels, self.samples_matched))

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["label", "samples_matched", "term_hits", "corpus_size"])
            for label, matched, hits in zip(self.labels, self.samples_matched, self.term_hits):
                writer.writerow([label, matched, hits, self.corpus_size])


def read_occurrence_csv(path: str | Path) -> OccurrenceTable:
    labels: list[str] = []
    matched: list[int] = []
    hits: list[int] = []
    corpus_size = 0
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            labels.append(row["label"])
            matched.append(int(row["samples_matched"]))
            hits.append(int(row["term_hits"]))
            corpus_size = int(row["corpus_size"])
    return OccurrenceTable(
        labels=tuple(labels), samples_matched=tuple(matched), term_hits=tuple(hits),
        corpus_size=corpus_size, undecodable=0,
    )


def _shard_bounds(path: Path, shards: int) -> list[tuple[int, int]]:
    """Byte ranges aligned to line boundaries; a sample never spans shards."""
    size = path.stat().st_size
    if shards < 1:
        raise CorpusError("shard count must be >= 1")
    bounds: list[int] = [0]
    with path.open("rb") as fh:
        for k in range(1, shards):
            target = size * k // shards
            if target <= bounds[-1]:
                continue
            fh.seek(target)
            fh.readline()  # advance to the next line start
            cut = fh.tell()
            if bounds[-1] < cut < size:
                bounds.append(cut)
    bounds.append(size)
    return [(bounds[i], bounds[i + 1]) for i in range(len(bounds) - 1)]


def _iter_chunks(path: Path, start: int, end: int) -> Iterable[bytes]:
    """Yield chunks of [start, end) whose boundaries fall on newlines."""
    with path.open("rb") as fh:
        fh.seek(start)
        remainder = b""
        position = start
        while position < end:
            chunk = fh.read(min(_CHUNK_BYTES, end - position))
            if not chunk:
                break
            position += len(chunk)
            data = remainder + chunk
            cut = data.rfind(b"\n")
            if cut == -1 or position >= end:
                if position >= end:
                    yield data
                    remainder = b""
                else:
                    remainder = data
                continue
            yield data[: cut + 1]
            remainder = data[cut + 1 :]
        if remainder:
            yield remainder


def _extract_tsv_column(chunk: bytes, column: int) -> bytes:
    """Rewrite a TSV chunk to bare captions; missing columns become empty lines."""
    lines = chunk.split(b"\n")
    trailing_newline = chunk.endswith(b"\n")
    if trailing_newline:
        lines = lines[:-1]
    captions = []
    for line in lines:
        if line.endswith(b"\r"):
            line = line[:-1]
        fields = line.split(b"\t")
        captions.append(fields[column] if column < len(fields) else b"")
    tail = b"\n" if trailing_newline else b""
    return b"\n".join(captions) + tail


def count_corpus(
    matcher: Matcher,
    corpus_path: str | Path,
    shards: int = 1,
    tsv_column: int | None = None,
    max_workers: int | None = None,
    kernel: str | None = None,
) -> OccurrenceTable:
    """Count label occurrences over a newline-delimited (or TSV) caption file.

    The file is split into ``shards`` line-aligned byte ranges whose counters
    merge by addition, so the result is identical for any shard count. Samples
    that are not valid UTF-8 are counted in ``corpus_size`` and ``undecodable``
    but never matched.
    """
    path = Path(corpus_path)
    if not path.is_file():
        raise CorpusError(f"corpus file not found: {path}")

    def run_shard(bounds: tuple[int, int]) -> ChunkScanner:
        scanner = matcher.scanner(kernel=kernel)
        for chunk in _iter_chunks(path, *bounds):
            if tsv_column is not None:
                chunk = _extract_tsv_column(chunk, tsv_column)
            scanner.feed(chunk)
        return scanner

    shard_bounds = _shard_bounds(path, shards)
    if len(shard_bounds) == 1:
        scanners = [run_shard(shard_bounds[0])]
    else:
        with ThreadPoolExecutor(max_workers=max_workers or min(len(shard_bounds), 8)) as pool:
            scanners = list(pool.map(run_shard, shard_bounds))

    n = len(matcher.labels)
    samples = [0] * n
    hits = [0] * n
    corpus_size = 0
    undecodable = 0
    for scanner in scanners:
        shard_samples, shard_hits = scanner.counts()
        for i in range(n):
            samples[i] += shard_samples[i]
            hits[i] += shard_hits[i]
        corpus_size += scanner.n_samples
        undecodable += scanner.n_undecodable
    return OccurrenceTable(
        labels=matcher.labels,
        samples_matched=tuple(samples),
        term_hits=tuple(hits),
        corpus_size=corpus_size,
        undecodable=undecodable,
    )


def count_captions(
    matcher: Matcher, captions: Iterable[str], kernel: str | None = None
) -> OccurrenceTable:
    """Count over an in-memory iterable of captions (one sample each)."""
    scanner = matcher.scanner(kernel=kernel)
    for caption in captions:
        scanner.feed(caption.encode("utf-8", errors="surrogatepass") + b"\n")
    samples, hits = scanner.counts()
    return OccurrenceTable(
        labels=matcher.labels,
        samples_matched=tuple(samples),
        term_hits=tuple(hits),
        corpus_size=scanner.n_samples,
        undecodable=scanner.n_undecodable,
    )
