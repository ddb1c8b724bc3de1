"""Gallery construction for the five evaluation setups, plus skip/oracle logic.

For one query image and an attribute budget ``x`` each setup builds the set
of candidate prompts ranked against the image:

    S1  instance = label + x image attributes; negatives = bare labels
    S2  negatives carry the label plus the *same* x image attributes
    S3  negatives carry the label plus x attributes of their own class profile
    S4  no labels anywhere: base noun + attributes only
    S5  two prompts: true label + x absent attributes vs. a wrong label + x
        true image attributes

Images with fewer than ``x`` attributes are skipped (S5 additionally needs
``x`` absent attributes). All randomness flows through per-image streams
derived from (run seed, image id, purpose), so construction is reproducible
and independent of processing order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .datasets import AttributeDataset
from .prompts import Prompt, PromptGrammar, render

S1, S2, S3, S4, S5 = "S1", "S2", "S3", "S4", "S5"
SETUPS = (S1, S2, S3, S4, S5)
LABEL_FREE_SETUPS = (S4,)

SEEDED_RANDOM = "seeded_random"
RANKED = "ranked"
PREFIX_NESTED = "prefix_nested"
ATTRIBUTE_ORDERS = (SEEDED_RANDOM, RANKED, PREFIX_NESTED)

# Stream tags keep the RNG draws for different purposes independent.
_INSTANCE, _NEGATIVE, _WRONG_LABEL, _ABSENT, _ORACLE = 1, 2, 3, 4, 5


class SetupError(ValueError):
    """Raised for invalid setup specifications."""


@dataclass(frozen=True)
class SetupSpec:
    """One evaluation configuration: setup, attribute count, grammar, seed."""

    setup: str
    x: int
    grammar: PromptGrammar
    seed: int = 0
    attribute_order: str = SEEDED_RANDOM

    def __post_init__(self) -> None:
        if self.setup not in SETUPS:
            raise SetupError(f"unknown setup {self.setup!r}")
        if self.x < 0:
            raise SetupError("attribute count x must be >= 0")
        if self.setup in (S4, S5) and self.x < 1:
            raise SetupError(f"{self.setup} requires x >= 1")
        if self.attribute_order not in ATTRIBUTE_ORDERS:
            raise SetupError(f"unknown attribute order {self.attribute_order!r}")


@dataclass(frozen=True)
class GallerySet:
    """The candidate prompts for one image under one SetupSpec."""

    image_id: int
    setup: str
    x: int
    prompts: tuple[Prompt, ...]
    option_classes: tuple[int, ...]  # class represented by each gallery slot
    correct_index: int
    short_profile_classes: tuple[int, ...] = field(default=())

    @property
    def instance_prompt(self) -> Prompt:
        return self.prompts[self.correct_index]

    @property
    def negatives(self) -> tuple[Prompt, ...]:
        return tuple(p for i, p in enumerate(self.prompts) if i != self.correct_index)


def _rng(entropy: tuple[int, ...]) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def _sample_subset(
    dataset: AttributeDataset,
    pool: Sequence[int],
    x: int,
    spec: SetupSpec,
    image_id: int,
    purpose: int,
    stream: int = 0,
) -> tuple[int, ...]:
    """Draw an ordered subset of ``x`` attribute ids from ``pool``.

    ``ranked`` takes the pool prefix; the seeded modes draw a permutation, with
    ``prefix_nested`` reusing one permutation across all x so the x-sample is a
    prefix of the (x+1)-sample. When attributes carry expressions, at most one
    expression per description is picked; leftover slots are filled from the
    remaining pool only when the constraint alone cannot reach ``x``.
    """
    if x == 0:
        return ()
    if x > len(pool):
        raise SetupError(f"cannot draw {x} attributes from a pool of {len(pool)}")
    if spec.attribute_order == RANKED:
        ordered = list(pool)
    else:
        entropy: tuple[int, ...] = (spec.seed, image_id, purpose, stream)
        if spec.attribute_order == SEEDED_RANDOM:
            entropy += (x,)
        perm = _rng(entropy).permutation(len(pool))
        ordered = [pool[i] for i in perm]

    constrained = any(dataset.attributes[aid].expression for aid in pool)
    if not constrained:
        return tuple(ordered[:x])
    picked: list[int] = []
    leftovers: list[int] = []
    used: set[str] = set()
    for aid in ordered:
        description = dataset.attributes[aid].description
        if description not in used:
            picked.append(aid)
            used.add(description)
        else:
            leftovers.append(aid)
    if len(picked) < x:
        picked.extend(leftovers[: x - len(picked)])
    return tuple(picked[:x])


def _absent_pool(dataset: AttributeDataset, attribute_ids: Sequence[int]) -> list[int]:
    """Attribute ids that contradict nothing the image shows.

    With expression-style vocabularies every expression of a present
    description counts as present, so "absent" excludes the whole description.
    """
    present_descriptions = {dataset.attributes[aid].description for aid in attribute_ids}
    present = set(attribute_ids)
    pool = []
    for attr in dataset.attributes:
        if attr.id in present:
            continue
        if attr.expression and attr.description in present_descriptions:
            continue
        pool.append(attr.id)
    return pool


def build_gallery(
    dataset: AttributeDataset, image_id: int, spec: SetupSpec
) -> GallerySet | None:
    """Build the prompt gallery for one image; ``None`` means the image is skipped."""
    img = dataset.images[image_id]
    attrs = img.attribute_ids
    if len(attrs) < spec.x:
        return None
    grammar = spec.grammar
    attr_of = dataset.attributes

    if spec.setup == S5:
        absent_pool = _absent_pool(dataset, attrs)
        if len(absent_pool) < spec.x:
            return None
        instance_attrs = _sample_subset(dataset, attrs, spec.x, spec, image_id, _INSTANCE)
        absent_attrs = _sample_subset(
            dataset, absent_pool, spec.x, spec, image_id, _ABSENT
        )
        wrong_stream = _rng((spec.seed, image_id, _WRONG_LABEL))
        wrong = int(wrong_stream.integers(0, dataset.n_classes - 1))
        if wrong >= img.class_id:
            wrong += 1
        prompt_a = render(
            grammar, dataset.label(img.class_id),
            [attr_of[a] for a in absent_attrs], class_id=img.class_id,
        )
        prompt_b = render(
            grammar, dataset.label(wrong),
            [attr_of[a] for a in instance_attrs], class_id=wrong,
        )
        return GallerySet(
            image_id=image_id, setup=S5, x=spec.x,
            prompts=(prompt_a, prompt_b),
            option_classes=(img.class_id, wrong),
            correct_index=0,
        )

    instance_attrs = _sample_subset(dataset, attrs, spec.x, spec, image_id, _INSTANCE)
    label_free = spec.setup in LABEL_FREE_SETUPS
    prompts: list[Prompt] = []
    short_profiles: list[int] = []
    for class_id in range(dataset.n_classes):
        label = None if label_free else dataset.label(class_id)
        tag = None if label_free else class_id
        if class_id == img.class_id:
            chosen = instance_attrs
        elif spec.setup == S1:
            chosen = ()
        elif spec.setup == S2:
            chosen = instance_attrs
        else:  # S3 / S4: attributes of the negative's own class profile
            profile = dataset.profile(class_id).attribute_ids
            if len(profile) < spec.x:
                short_profiles.append(class_id)
                chosen = profile
            else:
                chosen = _sample_subset(
                    dataset, profile, spec.x, spec, image_id, _NEGATIVE, stream=class_id
                )
        prompts.append(render(grammar, label, [attr_of[a] for a in chosen], class_id=tag))

    return GallerySet(
        image_id=image_id, setup=spec.setup, x=spec.x,
        prompts=tuple(prompts),
        option_classes=tuple(range(dataset.n_classes)),
        correct_index=img.class_id,
        short_profile_classes=tuple(short_profiles),
    )


def skip_rate(dataset: AttributeDataset, x: int) -> float:
    """Fraction of images carrying fewer than ``x`` attributes."""
    if not dataset.images:
        return 0.0
    skipped = sum(1 for img in dataset.images if len(img.attribute_ids) < x)
    return skipped / len(dataset.images)


@dataclass(frozen=True)
class SkipLedger:
    """Skipped-image counts per attribute budget (setup-independent)."""

    total_images: int
    skipped: dict[int, int]

    def rate(self, x: int) -> float:
        if self.total_images == 0:
            return 0.0
        return self.skipped[x] / self.total_images


def build_skip_ledger(dataset: AttributeDataset, xs: Iterable[int]) -> SkipLedger:
    counts = {
        x: sum(1 for img in dataset.images if len(img.attribute_ids) < x) for x in xs
    }
    return SkipLedger(total_images=len(dataset.images), skipped=counts)


def oracle_accuracy(
    dataset: AttributeDataset,
    x: int,
    trials_seed: int = 0,
    trials: int = 1,
    fractional_ties: bool = False,
) -> float:
    """Monte-Carlo upper bound for attributes-only galleries.

    The oracle knows the image's true attribute set and answers correctly
    unless some negative's sampled attributes are fully contained in it; such
    a gallery is undecidable on attributes alone. ``fractional_ties`` awards
    1/(1+ties) instead of 0 on ambiguous galleries. Draws ``trials`` galleries
    per non-skipped image and returns the mean success.
    """
    if x < 1:
        raise SetupError("oracle requires x >= 1")
    profiles = [p.attribute_ids for p in dataset.class_profiles]
    n_classes = dataset.n_classes
    scores: list[float] = []
    for img in dataset.images:
        if len(img.attribute_ids) < x:
            continue
        truth = set(img.attribute_ids)
        # One sequential stream per image (draws ordered by trial, then class)
        # keeps the estimate independent of image processing order while
        # staying cheap at dataset scale.
        rng = _rng((trials_seed, img.image_id, _ORACLE))
        for _ in range(trials):
            ties = 0
            for class_id in range(n_classes):
                if class_id == img.class_id:
                    continue
                profile = profiles[class_id]
                if len(profile) <= x:
                    # x-subset of an x-or-smaller profile is the profile itself
                    if set(profile) <= truth:
                        ties += 1
                    continue
                picked = rng.choice(len(profile), size=x, replace=False)
                if all(profile[i] in truth for i in picked):
                    ties += 1
            if ties == 0:
                scores.append(1.0)
            else:
                scores.append(1.0 / (1 + ties) if fractional_ties else 0.0)
    if not scores:
        raise SetupError(f"all images skipped at x={x}")
    return float(np.mean(scores))


def export_galleries(galleries: Iterable[GallerySet], path: str | Path) -> None:
    """Dump galleries as ndjson for auditing."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for g in galleries:
            fh.write(
                json.dumps(
                    {
                        "image_id": g.image_id,
                        "setup": g.setup,
                        "x": g.x,
                        "prompts": [
                            {
                                "text": p.text,
                                "class": p.class_id,
                                "attribute_ids": list(p.attribute_ids),
                            }
                            for p in g.prompts
                        ],
                        "correct_index": g.correct_index,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
