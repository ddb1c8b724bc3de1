"""Per-image attribute detection for class-annotated datasets.

Class-level attribute sets are filtered down to per-image subsets by cosine
similarity between the image embedding and an averaged three-prompt encoding
of each attribute. A cutoff keeps an attribute only when its similarity is
strictly greater; the cutoff can be given directly or calibrated so detection
preserves a target mean number of attributes per image.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .backends import EmbeddingBackend, normalize_rows
from .datasets import PER_CLASS_ATTRIBUTES, AttributeDataset
from .prompts import render_detection_prompts

logger = logging.getLogger(__name__)

CUTOFF_RESOLUTION = 1e-4


class DetectionError(ValueError):
    """Raised for invalid detection configuration or unreachable targets."""


@dataclass(frozen=True)
class DetectionConfig:
    """Exactly one of ``cutoff`` and ``target_mean_attrs`` drives a run."""

    cutoff: float | None = None
    target_mean_attrs: float | None = None

    def __post_init__(self) -> None:
        if (self.cutoff is None) == (self.target_mean_attrs is None):
            raise DetectionError("set exactly one of cutoff and target_mean_attrs")
        if self.cutoff is not None and not -1.0 < self.cutoff < 1.0:
            raise DetectionError(f"cutoff {self.cutoff} outside (-1, 1)")


@dataclass(frozen=True)
class DetectionResult:
    """Detected per-image attribute sets plus the updated dataset."""

    dataset: AttributeDataset
    kept: dict[int, tuple[tuple[int, float], ...]]  # image id -> ((attr, sim), ...)
    cutoff_used: float
    mean_attrs_per_image: float


def attribute_directions(dataset: AttributeDataset, backend: EmbeddingBackend) -> np.ndarray:
    """Encode every attribute as the normalized mean of its three probe prompts."""
    prompts = []
    for attr in dataset.attributes:
        prompts.extend(render_detection_prompts(attr))
    vectors = backend.embed_prompts(prompts)
    grouped = vectors.reshape(dataset.n_attributes, 3, backend.dim).mean(axis=1)
    return normalize_rows(grouped)


def image_similarities(
    dataset: AttributeDataset, backend: EmbeddingBackend
) -> list[list[tuple[int, float]]]:
    """Per image, cosine similarity to each attribute of its class profile."""
    directions = attribute_directions(dataset, backend)
    image_vecs = backend.embed_images([img.image_id for img in dataset.images])
    warned_classes: set[int] = set()
    out: list[list[tuple[int, float]]] = []
    for row, img in zip(image_vecs, dataset.images):
        profile = dataset.profile(img.class_id).attribute_ids
        if not profile and img.class_id not in warned_classes:
            warned_classes.add(img.class_id)
            logger.warning(
                "class %r has an empty profile; its images get empty attribute sets",
                dataset.label(img.class_id),
            )
        sims = directions[list(profile)] @ row if profile else np.empty(0)
        out.append([(aid, float(s)) for aid, s in zip(profile, sims)])
    return out


def _kept_for_cutoff(
    sims: list[tuple[int, float]], cutoff: float
) -> tuple[tuple[int, float], ...]:
    kept = [(aid, s) for aid, s in sims if s > cutoff]
    kept.sort(key=lambda pair: (-pair[1], pair[0]))
    return tuple(kept)


def detect(
    dataset: AttributeDataset,
    backend: EmbeddingBackend,
    cfg: DetectionConfig,
    similarities: list[list[tuple[int, float]]] | None = None,
) -> DetectionResult:
    """Assign per-image attribute subsets, ordered by descending similarity.

    ``similarities`` may be passed to reuse a previous embedding pass (e.g.
    right after calibration); it must come from :func:`image_similarities` on
    the same dataset/backend pair.
    """
    if dataset.flavor != PER_CLASS_ATTRIBUTES:
        raise DetectionError(
            f"detection expects a {PER_CLASS_ATTRIBUTES} dataset, got {dataset.flavor}"
        )
    if similarities is None:
        similarities = image_similarities(dataset, backend)
    cutoff = cfg.cutoff
    if cutoff is None:
        assert cfg.target_mean_attrs is not None
        cutoff = calibrate_from_similarities(
            [[s for _, s in sims] for sims in similarities], cfg.target_mean_attrs
        )

    kept = {
        img.image_id: _kept_for_cutoff(sims, cutoff)
        for img, sims in zip(dataset.images, similarities)
    }
    updated = dataset.with_image_attributes(
        {iid: tuple(aid for aid, _ in pairs) for iid, pairs in kept.items()}
    )
    mean_attrs = sum(len(p) for p in kept.values()) / len(kept) if kept else 0.0
    return DetectionResult(
        dataset=updated, kept=kept, cutoff_used=cutoff, mean_attrs_per_image=mean_attrs
    )


def mean_kept(similarity_pools: Sequence[Sequence[float]], cutoff: float) -> float:
    """Mean per-image count of similarities strictly above ``cutoff``."""
    if not similarity_pools:
        return 0.0
    total = sum(sum(1 for s in sims if s > cutoff) for sims in similarity_pools)
    return total / len(similarity_pools)


def calibrate_from_similarities(
    similarity_pools: Sequence[Sequence[float]],
    target_mean_attrs: float,
    resolution: float = CUTOFF_RESOLUTION,
) -> float:
    """Largest cutoff (on the resolution grid) keeping a mean of >= target attributes.

    The kept-count is a step function of the cutoff whose breakpoints are the
    pooled similarity values, so the answer sits just below the K-th largest
    pooled value, where K is the smallest total count reaching the target.
    """
    n_images = len(similarity_pools)
    if n_images == 0:
        raise DetectionError("no images to calibrate against")
    pooled = np.sort(np.concatenate([np.asarray(s, dtype=np.float64) for s in similarity_pools])
                     if any(len(s) for s in similarity_pools) else np.empty(0))[::-1]
    max_mean = len(pooled) / n_images
    if target_mean_attrs <= 0:
        raise DetectionError(f"target mean {target_mean_attrs} not in (0, {max_mean:.4f}]")
    k = math.ceil(target_mean_attrs * n_images - 1e-9)
    if k > len(pooled):
        raise DetectionError(
            f"target mean {target_mean_attrs} unreachable; achievable range is "
            f"(0, {max_mean:.4f}]"
        )
    threshold = float(pooled[k - 1])
    steps = math.floor(round(threshold / resolution, 9))
    cutoff = steps * resolution
    while cutoff >= threshold:
        steps -= 1
        cutoff = steps * resolution
    if cutoff <= -1.0:
        raise DetectionError(
            f"calibrated cutoff {cutoff:.4f} leaves the (-1, 1) domain; "
            f"achievable range is (0, {max_mean:.4f}]"
        )
    return cutoff


def calibrate_cutoff(
    dataset: AttributeDataset,
    backend: EmbeddingBackend,
    target_mean_attrs: float,
    resolution: float = CUTOFF_RESOLUTION,
) -> float:
    """Calibrate the detection cutoff against a live backend."""
    sims = image_similarities(dataset, backend)
    return calibrate_from_similarities(
        [[s for _, s in pairs] for pairs in sims], target_mean_attrs, resolution
    )


def save_detection(result: DetectionResult, path: str | Path) -> None:
    """Persist per-image kept attributes plus a summary record as ndjson."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for image_id in sorted(result.kept):
            fh.write(
                json.dumps(
                    {"image_id": image_id,
                     "kept": [[aid, sim] for aid, sim in result.kept[image_id]]}
                )
                + "\n"
            )
        fh.write(
            json.dumps(
                {"summary": {
                    "cutoff_used": result.cutoff_used,
                    "mean_attrs_per_image": result.mean_attrs_per_image,
                    "n_images": len(result.kept),
                }}
            )
            + "\n"
        )


def load_detection(path: str | Path) -> tuple[dict[int, tuple[tuple[int, float], ...]], dict]:
    kept: dict[int, tuple[tuple[int, float], ...]] = {}
    summary: dict = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        if "summary" in record:
            summary = record["summary"]
        else:
            kept[record["image_id"]] = tuple((a, s) for a, s in record["kept"])
    return kept, summary


def apply_detection(
    dataset: AttributeDataset, kept: dict[int, tuple[tuple[int, float], ...]]
) -> AttributeDataset:
    """Write previously saved detection results back into a dataset."""
    return dataset.with_image_attributes(
        {iid: tuple(aid for aid, _ in pairs) for iid, pairs in kept.items()}
    )
