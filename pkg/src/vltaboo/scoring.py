"""Image-vs-gallery retrieval scoring and report aggregation.

Cosine similarities (dot products of unit vectors), a numerically stable
softmax, argmax prediction with lowest-index tie-breaking, and aggregation
into per-setup accuracy / per-class recall reports.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .backends import CachingBackend, EmbeddingBackend
from .datasets import AttributeDataset
from .prompts import render
from .setups import GallerySet, SetupSpec, build_gallery

PROB_SUM_TOL = 1e-9


class ScoringError(RuntimeError):
    """Raised when a run cannot produce a report (e.g. every image skipped)."""


def softmax(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    shifted = values - values.max()
    exp = np.exp(shifted)
    return exp / exp.sum()


@dataclass(frozen=True)
class ScoredGallery:
    """Similarities and probabilities of one gallery against its image."""

    image_id: int
    option_classes: tuple[int, ...]
    similarities: np.ndarray
    probabilities: np.ndarray
    predicted_index: int
    correct_index: int
    n_ties: int

    @property
    def correct(self) -> bool:
        return self.predicted_index == self.correct_index


def score_gallery(
    backend: EmbeddingBackend, image_id: int, gallery: GallerySet
) -> ScoredGallery:
    """Embed the image and every gallery prompt, rank by cosine similarity."""
    if not gallery.prompts:
        raise ScoringError(f"gallery for image {image_id} is empty")
    image_vec = backend.embed_image(image_id)
    prompt_vecs = backend.embed_prompts(gallery.prompts)
    similarities = prompt_vecs @ image_vec
    probabilities = softmax(similarities)
    predicted = int(np.argmax(similarities))
    ties = int(np.sum(similarities == similarities[predicted])) - 1
    return ScoredGallery(
        image_id=image_id,
        option_classes=gallery.option_classes,
        similarities=similarities,
        probabilities=probabilities,
        predicted_index=predicted,
        correct_index=gallery.correct_index,
        n_ties=ties,
    )


def topk(scored: ScoredGallery, k: int) -> list[tuple[int, float]]:
    """Top-k (class, probability) pairs, descending; ties keep gallery order."""
    if k > len(scored.probabilities):
        raise ValueError(f"k={k} exceeds gallery size {len(scored.probabilities)}")
    order = np.argsort(-scored.probabilities, kind="stable")[:k]
    return [(scored.option_classes[i], float(scored.probabilities[i])) for i in order]


@dataclass(frozen=True)
class EvalReport:
    """Aggregate results for one (model, dataset, setup, grammar, x) cell."""

    model: str
    dataset: str
    setup: str
    grammar: str
    x: int
    accuracy: float
    skip_rate: float
    n_evaluated: int
    n_images: int
    per_class_recall: dict[int, float]
    per_class_counts: dict[int, tuple[int, int]]  # class -> (correct, evaluated)
    n_ties: int

    def csv_row(self) -> list:
        return [
            self.model, self.dataset, self.setup, self.grammar, self.x,
            self.accuracy, self.skip_rate, self.n_evaluated,
        ]


EVAL_CSV_HEADER = ["model", "dataset", "setup", "grammar", "x", "accuracy",
                   "skip_rate", "n_evaluated"]


def run_setup(
    dataset: AttributeDataset,
    backend: EmbeddingBackend,
    spec: SetupSpec,
    image_ids: Sequence[int] | None = None,
) -> EvalReport:
    """Score every (non-skipped) image of the dataset under one setup.

    Results are aggregated by image id, so any processing order produces the
    identical report. ``image_ids`` restricts or reorders the evaluated pool
    (used for subset smoke runs); aggregation still keys on ids.
    """
    if not isinstance(backend, CachingBackend):
        backend = CachingBackend(backend)
    ids = list(image_ids) if image_ids is not None else [i.image_id for i in dataset.images]
    outcomes: dict[int, ScoredGallery] = {}
    n_skipped = 0
    for image_id in ids:
        gallery = build_gallery(dataset, image_id, spec)
        if gallery is None:
            n_skipped += 1
            continue
        outcomes[image_id] = score_gallery(backend, image_id, gallery)
    if not outcomes:
        raise ScoringError(
            f"{spec.setup} x={spec.x}: all {len(ids)} images skipped"
        )

    correct_by_class: dict[int, int] = {}
    total_by_class: dict[int, int] = {}
    n_ties = 0
    for image_id in sorted(outcomes):
        scored = outcomes[image_id]
        class_id = dataset.images[image_id].class_id
        total_by_class[class_id] = total_by_class.get(class_id, 0) + 1
        if scored.correct:
            correct_by_class[class_id] = correct_by_class.get(class_id, 0) + 1
        n_ties += scored.n_ties

    n_evaluated = len(outcomes)
    accuracy = sum(correct_by_class.values()) / n_evaluated
    recall = {
        c: correct_by_class.get(c, 0) / total_by_class[c] for c in sorted(total_by_class)
    }
    counts = {
        c: (correct_by_class.get(c, 0), total_by_class[c]) for c in sorted(total_by_class)
    }
    return EvalReport(
        model=backend.model_name,
        dataset=dataset.name,
        setup=spec.setup,
        grammar=spec.grammar.kind,
        x=spec.x,
        accuracy=accuracy,
        skip_rate=n_skipped / len(ids),
        n_evaluated=n_evaluated,
        n_images=len(ids),
        per_class_recall=recall,
        per_class_counts=counts,
        n_ties=n_ties,
    )


def write_reports_csv(reports: Iterable[EvalReport], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EVAL_CSV_HEADER)
        for report in reports:
            writer.writerow(report.csv_row())


def write_recall_csv(
    report: EvalReport, dataset: AttributeDataset, path: str | Path
) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "label", "recall", "n"])
        for class_id, recall in report.per_class_recall.items():
            writer.writerow(
                [class_id, dataset.label(class_id), recall,
                 report.per_class_counts[class_id][1]]
            )


@dataclass(frozen=True)
class DistanceProfile:
    """Cosine distances of one image to label+attribute prompts over x = 0..X."""

    image_id: int
    rows: tuple[tuple[int, int, float], ...]  # (class_id, x, distance)


def distance_profile(
    backend: EmbeddingBackend,
    dataset: AttributeDataset,
    image_id: int,
    class_ids: Sequence[int],
    x_max: int,
    spec_base: SetupSpec,
) -> DistanceProfile:
    """Distances to adversarial-attribute prompts for each class and x.

    Prompts follow the S2 construction: every class label carries the same x
    instance attributes; x runs from 0 to min(x_max, image attribute count).
    """
    if not isinstance(backend, CachingBackend):
        backend = CachingBackend(backend)
    img = dataset.images[image_id]
    image_vec = backend.embed_image(image_id)
    feasible = min(x_max, len(img.attribute_ids))
    rows: list[tuple[int, int, float]] = []
    from .setups import _INSTANCE, _sample_subset  # shared sampling streams

    for x in range(0, feasible + 1):
        chosen = _sample_subset(dataset, img.attribute_ids, x, spec_base, image_id, _INSTANCE)
        attrs = [dataset.attributes[a] for a in chosen]
        prompts = [
            render(spec_base.grammar, dataset.label(c), attrs, class_id=c)
            for c in class_ids
        ]
        vectors = backend.embed_prompts(prompts)
        sims = vectors @ image_vec
        rows.extend((c, x, float(1.0 - s)) for c, s in zip(class_ids, sims))
    return DistanceProfile(image_id=image_id, rows=tuple(rows))


def write_distance_profiles(profiles: Iterable[DistanceProfile], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for profile in profiles:
            for class_id, x, distance in profile.rows:
                fh.write(
                    json.dumps(
                        {"image_id": profile.image_id, "class": class_id,
                         "x": x, "distance": distance}
                    )
                    + "\n"
                )


def write_topk(
    entries: Iterable[tuple[int, list[tuple[int, float]]]],
    dataset: AttributeDataset,
    path: str | Path,
) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for image_id, ranking in entries:
            fh.write(
                json.dumps(
                    {
                        "image_id": image_id,
                        "topk": [
                            {"class": c, "label": dataset.label(c), "probability": p}
                            for c, p in ranking
                        ],
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
