"""Shared fixture builders and independent oracles for the test suite.

The oracles here re-derive expected values from first principles (hand loops,
subset enumeration, substring search) and never touch the implementation
paths they check.
"""

from __future__ import annotations

import itertools
import math
from pathlib import Path

from vltaboo.datasets import (
    PER_CLASS_ATTRIBUTES,
    PER_IMAGE_ATTRIBUTES,
    Attribute,
    AttributeDataset,
    ClassAttributeProfile,
    ImageAnnotation,
)

# ---------------------------------------------------------------------------
# Synthetic dataset-directory writers (source-file layouts)


def write_cub_root(
    root: Path,
    classes: list[str],
    attributes: list[str],
    image_classes: list[int],  # 1-based class per image, index 0 = image 1
    image_attr_rows: list[tuple[int, int, int, int]],  # (img, attr, present, certainty)
    class_matrix: list[list[float]],
) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    (root / "classes.txt").write_text(
        "".join(f"{i + 1} {name}\n" for i, name in enumerate(classes)), encoding="utf-8"
    )
    (root / "attributes.txt").write_text(
        "".join(f"{i + 1} {name}\n" for i, name in enumerate(attributes)), encoding="utf-8"
    )
    (root / "image_class_labels.txt").write_text(
        "".join(f"{i + 1} {c}\n" for i, c in enumerate(image_classes)), encoding="utf-8"
    )
    (root / "image_attribute_labels.txt").write_text(
        "".join(f"{img} {attr} {p} {c} 1.50\n" for img, attr, p, c in image_attr_rows),
        encoding="utf-8",
    )
    (root / "class_attribute_labels_continuous.txt").write_text(
        "".join(" ".join(str(v) for v in row) + "\n" for row in class_matrix),
        encoding="utf-8",
    )
    return root


def write_awa2_root(
    root: Path,
    classes: list[str],
    predicates: list[str],
    matrix: list[list[int]],
    image_classes: list[int],  # 1-based class per image
) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    (root / "classes.txt").write_text(
        "".join(f"{i + 1}\t{name}\n" for i, name in enumerate(classes)), encoding="utf-8"
    )
    (root / "predicates.txt").write_text(
        "".join(f"{i + 1}\t{name}\n" for i, name in enumerate(predicates)), encoding="utf-8"
    )
    (root / "predicate-matrix-binary.txt").write_text(
        "".join(" ".join(str(v) for v in row) + "\n" for row in matrix), encoding="utf-8"
    )
    (root / "images.txt").write_text(
        "".join(f"{i + 1} {c}\n" for i, c in enumerate(image_classes)), encoding="utf-8"
    )
    return root


# ---------------------------------------------------------------------------
# In-memory dataset factory


def make_dataset(
    labels: list[str],
    attributes: list[tuple[str, str]],  # (description, expression)
    images: list[tuple[int, tuple[int, ...]]],  # (class_id, attribute ids)
    profiles: list[tuple[int, ...]] | None = None,  # per class, attribute ids
    name: str = "synthetic",
    flavor: str = PER_IMAGE_ATTRIBUTES,
) -> AttributeDataset:
    attr_objs = tuple(
        Attribute(id=i, description=d, expression=e, raw_name=f"{d}::{e}" if e else d)
        for i, (d, e) in enumerate(attributes)
    )
    image_objs = tuple(
        ImageAnnotation(image_id=i, class_id=c, attribute_ids=tuple(attrs))
        for i, (c, attrs) in enumerate(images)
    )
    if profiles is None:
        profiles = [() for _ in labels]
    profile_objs = tuple(
        ClassAttributeProfile(
            class_id=c, attribute_ids=tuple(p), scores=tuple(1.0 for _ in p)
        )
        for c, p in enumerate(profiles)
    )
    return AttributeDataset(
        name=name,
        class_labels=tuple(labels),
        attributes=attr_objs,
        images=image_objs,
        class_profiles=profile_objs,
        flavor=flavor,
    )


def disjoint_profile_dataset(
    n_classes: int = 4, attrs_per_class: int = 6, images_per_class: int = 5
) -> AttributeDataset:
    """Classes with disjoint attribute profiles; each image shows its full profile."""
    labels = [f"species {c}" for c in range(n_classes)]
    attributes = [
        (f"trait {a}", "") for a in range(n_classes * attrs_per_class)
    ]
    profiles = [
        tuple(range(c * attrs_per_class, (c + 1) * attrs_per_class))
        for c in range(n_classes)
    ]
    images = [
        (c, profiles[c]) for c in range(n_classes) for _ in range(images_per_class)
    ]
    return make_dataset(labels, attributes, images, profiles)


# ---------------------------------------------------------------------------
# Independent oracles


def naive_skip_count(dataset: AttributeDataset, x: int) -> int:
    count = 0
    for img in dataset.images:
        if len(img.attribute_ids) < x:
            count += 1
    return count


def _expand_terms(label: str, case_sensitive: bool) -> list[bytes]:
    terms = []
    for synonym in label.split(", "):
        base = synonym if case_sensitive else synonym.lower()
        for plural in ("", "s", "es"):
            for suffix in (".", "!", "?", ":", " ", ",", ";", "-"):
                terms.append((" " + base + plural + suffix).encode("utf-8"))
    return terms


def naive_term_counts(
    labels: list[str], captions: list[str], case_sensitive: bool = False
) -> tuple[list[int], list[int]]:
    """Per-term overlapping substring scan over each wrapped caption."""
    samples = [0] * len(labels)
    hits = [0] * len(labels)
    term_lists = [_expand_terms(label, case_sensitive) for label in labels]
    for caption in captions:
        text = (" " + caption + " ").encode("utf-8")
        if not case_sensitive:
            text = bytes(b + 32 if 65 <= b <= 90 else b for b in text)
        for li, terms in enumerate(term_lists):
            found = 0
            seen_terms = set()
            for term in terms:
                if term in seen_terms:  # identical synonym collapse
                    continue
                seen_terms.add(term)
                pos = text.find(term)
                while pos != -1:
                    found += 1
                    pos = text.find(term, pos + 1)
            if found:
                samples[li] += 1
                hits[li] += found
    return samples, hits


_SUFFIX_BYTES = frozenset(b".!?: ,;-")


def fast_term_counts(labels: list[str], corpus: bytes) -> tuple[list[int], list[int]]:
    """Find-based scan for large corpora: locate " " + base, classify the tail.

    ``corpus`` must be the lowercased newline-delimited file bytes. No search
    term can contain a newline, so wrapping every line in spaces is equivalent
    to one scan over the corpus with newlines padded by spaces. Each match is
    identified by (start position, full term bytes), which collapses the same
    occurrence reached through overlapping synonyms exactly like the
    automaton's per-owner pattern dedup.
    """
    import bisect

    wrapped = b" " + corpus.replace(b"\n", b" \n ") + b" "
    newline_positions = []
    idx = wrapped.find(b"\n")
    while idx != -1:
        newline_positions.append(idx)
        idx = wrapped.find(b"\n", idx + 1)

    samples = [0] * len(labels)
    hits = [0] * len(labels)
    for li, label in enumerate(labels):
        occurrences: set[tuple[int, bytes]] = set()
        for synonym in label.split(", "):
            base = b" " + synonym.lower().encode("utf-8")
            blen = len(base)
            pos = wrapped.find(base)
            while pos != -1:
                tail = wrapped[pos + blen : pos + blen + 3]
                term = None
                if tail[:1] and tail[0] in _SUFFIX_BYTES:
                    term = base + tail[:1]
                elif tail[:1] == b"s" and tail[1:2] and tail[1] in _SUFFIX_BYTES:
                    term = base + tail[:2]
                elif tail[:2] == b"es" and tail[2:3] and tail[2] in _SUFFIX_BYTES:
                    term = base + tail[:3]
                if term is not None:
                    occurrences.add((pos, term))
                pos = wrapped.find(base, pos + 1)
        hits[li] = len(occurrences)
        samples[li] = len(
            {bisect.bisect_left(newline_positions, pos) for pos, _ in occurrences}
        )
    return samples, hits


def containment_probability(profile: tuple[int, ...], truth: set[int], x: int) -> float:
    """Exact probability that a uniform x-subset of ``profile`` lies inside ``truth``."""
    if len(profile) < x:
        return 1.0 if set(profile) <= truth else 0.0
    overlap = sum(1 for a in profile if a in truth)
    if overlap < x:
        return 0.0
    return math.comb(overlap, x) / math.comb(len(profile), x)


def enumeration_oracle(
    dataset: AttributeDataset, x: int, fractional: bool = False
) -> float:
    """Exact expected oracle accuracy via per-class subset enumeration.

    Negative draws are independent across classes, so the tie-count
    distribution is the convolution of per-class containment Bernoullis;
    strict scoring is the probability of zero ties.
    """
    values = []
    for img in dataset.images:
        if len(img.attribute_ids) < x:
            continue
        truth = set(img.attribute_ids)
        probs = []
        for class_id in range(dataset.n_classes):
            if class_id == img.class_id:
                continue
            profile = dataset.profile(class_id).attribute_ids
            if len(profile) < x:
                probs.append(1.0 if set(profile) <= truth else 0.0)
            else:
                contained = sum(
                    1
                    for subset in itertools.combinations(profile, x)
                    if set(subset) <= truth
                )
                probs.append(contained / math.comb(len(profile), x))
        if not fractional:
            success = 1.0
            for p in probs:
                success *= 1.0 - p
            values.append(success)
        else:
            dist = [1.0]  # dist[t] = P(T = t)
            for p in probs:
                nxt = [0.0] * (len(dist) + 1)
                for t, q in enumerate(dist):
                    nxt[t] += q * (1.0 - p)
                    nxt[t + 1] += q * p
                dist = nxt
            values.append(sum(q / (1 + t) for t, q in enumerate(dist)))
    return sum(values) / len(values)


def product_enumeration_oracle(dataset: AttributeDataset, x: int) -> float:
    """Brute-force product over every combination of per-class negative subsets."""
    values = []
    for img in dataset.images:
        if len(img.attribute_ids) < x:
            continue
        truth = set(img.attribute_ids)
        per_class_subsets = []
        for class_id in range(dataset.n_classes):
            if class_id == img.class_id:
                continue
            profile = dataset.profile(class_id).attribute_ids
            if len(profile) < x:
                per_class_subsets.append([profile])
            else:
                per_class_subsets.append(list(itertools.combinations(profile, x)))
        total = 0
        successes = 0
        for combo in itertools.product(*per_class_subsets):
            total += 1
            if all(not set(subset) <= truth for subset in combo):
                successes += 1
        values.append(successes / total)
    return sum(values) / len(values)
