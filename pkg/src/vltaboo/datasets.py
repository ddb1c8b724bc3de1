"""Canonical attribute-dataset model and loaders for the CUB/AWA2 text layouts.

Both loaders normalize the published whitespace-separated files (1-based ids)
into one immutable in-memory model with dense 0-based ids. The model can be
round-tripped through a newline-delimited JSON format so synthetic fixtures
stay hand-writable.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator

logger = logging.getLogger(__name__)

PER_IMAGE_ATTRIBUTES = "per_image_attributes"
PER_CLASS_ATTRIBUTES = "per_class_attributes"

# CUB certainty ids: 1 = not visible, 2 = guessing, 3 = probably, 4 = definitely.
CERTAINTY_PROBABLY = 3
CERTAINTY_DEFINITELY = 4


class IngestError(ValueError):
    """Raised when a dataset file is missing, malformed, or inconsistent."""


@dataclass(frozen=True)
class Attribute:
    """One attribute of the vocabulary.

    ``description`` is the human-readable predicate ("has head pattern");
    ``expression`` refines it ("crested") and is empty for single-token
    vocabularies such as AWA2. ``raw_name`` keeps the source spelling.
    """

    id: int
    description: str
    expression: str
    raw_name: str


@dataclass(frozen=True)
class ImageAnnotation:
    """Attributes observed on one image, post filtering/detection."""

    image_id: int
    class_id: int
    attribute_ids: tuple[int, ...]


@dataclass(frozen=True)
class ClassAttributeProfile:
    """Class-level attribute set with the source score of every kept attribute."""

    class_id: int
    attribute_ids: tuple[int, ...]
    scores: tuple[float, ...]

    def score_of(self, attribute_id: int) -> float:
        return self.scores[self.attribute_ids.index(attribute_id)]


@dataclass(frozen=True)
class AttributeDataset:
    """Immutable canonical dataset: classes, attribute vocabulary, annotations."""

    name: str
    class_labels: tuple[str, ...]
    attributes: tuple[Attribute, ...]
    images: tuple[ImageAnnotation, ...]
    class_profiles: tuple[ClassAttributeProfile, ...]
    flavor: str

    @property
    def n_classes(self) -> int:
        return len(self.class_labels)

    @property
    def n_attributes(self) -> int:
        return len(self.attributes)

    def label(self, class_id: int) -> str:
        return self.class_labels[class_id]

    def profile(self, class_id: int) -> ClassAttributeProfile:
        return self.class_profiles[class_id]

    def mean_profile_size(self) -> float:
        if not self.class_profiles:
            return 0.0
        return sum(len(p.attribute_ids) for p in self.class_profiles) / len(self.class_profiles)

    def with_image_attributes(self, per_image: dict[int, tuple[int, ...]]) -> "AttributeDataset":
        """Return a copy whose per-image attribute sets are replaced.

        Used by the attribute detector; images absent from ``per_image`` keep
        their current sets.
        """
        images = tuple(
            replace(img, attribute_ids=per_image.get(img.image_id, img.attribute_ids))
            for img in self.images
        )
        return replace(self, images=images, flavor=PER_IMAGE_ATTRIBUTES)


def _normalize_name(raw: str) -> str:
    return raw.replace("_", " ").replace("+", " ").strip()


def _read_lines(path: Path) -> list[str]:
    if not path.is_file():
        raise IngestError(f"missing dataset file: {path}")
    return path.read_text(encoding="utf-8").splitlines()


def _parse_indexed(path: Path, n_fields: int) -> Iterator[tuple[int, list[str]]]:
    """Yield (line_number, fields) for an 'id value...' file, checking arity."""
    for lineno, line in enumerate(_read_lines(path), start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) < n_fields:
            raise IngestError(f"{path}:{lineno}: expected {n_fields} fields, got {len(fields)}")
        yield lineno, fields


def _parse_int(path: Path, lineno: int, token: str, what: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise IngestError(f"{path}:{lineno}: non-integer {what}: {token!r}") from None


def _check_id(path: Path, lineno: int, value: int, upper: int, what: str) -> int:
    if not 1 <= value <= upper:
        raise IngestError(f"{path}:{lineno}: {what} {value} out of range 1..{upper}")
    return value - 1


def _load_name_list(path: Path, what: str) -> list[str]:
    names: list[str] = []
    for lineno, fields in _parse_indexed(path, 2):
        idx = _parse_int(path, lineno, fields[0], f"{what} id")
        if idx != len(names) + 1:
            raise IngestError(f"{path}:{lineno}: {what} ids must be contiguous from 1, got {idx}")
        names.append(_normalize_name(" ".join(fields[1:])))
    if not names:
        raise IngestError(f"{path}: no {what} entries found")
    return names


def _cub_file(root: Path, name: str) -> Path:
    # The published archive keeps some files under an attributes/ subfolder
    # (and attributes.txt at the archive top level); accept either layout.
    for candidate in (root / name, root / "attributes" / name):
        if candidate.is_file():
            return candidate
    return root / name  # let the reader raise the missing-file error


def load_cub(root_dir: str | Path, min_certainty: int = CERTAINTY_PROBABLY) -> AttributeDataset:
    """Load a CUB-2011-layout directory into the canonical model.

    Per-image attributes keep only rows marked present with certainty at least
    ``min_certainty`` (default "probably"). Class profiles keep, per attribute
    description, the expression with the highest continuous score, when that
    score is strictly positive; ties break toward the lowest attribute id.
    """
    root = Path(root_dir)
    class_names = _load_name_list(root / "classes.txt", "class")
    class_labels = tuple(_strip_class_prefix(name) for name in class_names)

    attributes: list[Attribute] = []
    attr_path = _cub_file(root, "attributes.txt")
    for lineno, fields in _parse_indexed(attr_path, 2):
        idx = _parse_int(attr_path, lineno, fields[0], "attribute id")
        if idx != len(attributes) + 1:
            raise IngestError(f"{attr_path}:{lineno}: attribute ids must be contiguous from 1")
        raw = " ".join(fields[1:])
        description, _, expression = raw.partition("::")
        attributes.append(
            Attribute(
                id=idx - 1,
                description=_normalize_name(description),
                expression=_normalize_name(expression),
                raw_name=raw,
            )
        )

    image_class: dict[int, int] = {}
    icl_path = root / "image_class_labels.txt"
    for lineno, fields in _parse_indexed(icl_path, 2):
        image_id = _parse_int(icl_path, lineno, fields[0], "image id")
        class_id = _check_id(
            icl_path, lineno, _parse_int(icl_path, lineno, fields[1], "class id"),
            len(class_labels), "class id",
        )
        if image_id in image_class:
            raise IngestError(f"{icl_path}:{lineno}: duplicate image id {image_id}")
        image_class[image_id] = class_id
    if sorted(image_class) != list(range(1, len(image_class) + 1)):
        raise IngestError(f"{icl_path}: image ids must be contiguous from 1")

    # The per-image attribute table is by far the largest file (3.7M rows on
    # real data), so this loop avoids int conversion except for kept rows.
    per_image: dict[int, list[int]] = {i: [] for i in image_class}
    ial_path = _cub_file(root, "image_attribute_labels.txt")
    keep_certainties = {str(c) for c in range(min_certainty, 5)}
    valid_certainties = {"1", "2", "3", "4"}
    n_attrs = len(attributes)
    for lineno, line in enumerate(_read_lines(ial_path), start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) < 4:
            raise IngestError(f"{ial_path}:{lineno}: expected 4 fields, got {len(fields)}")
        if fields[2] not in ("0", "1"):
            raise IngestError(f"{ial_path}:{lineno}: bad present flag {fields[2]!r}")
        if fields[3] not in valid_certainties:
            raise IngestError(f"{ial_path}:{lineno}: bad certainty id {fields[3]!r}")
        if fields[2] == "1" and fields[3] in keep_certainties:
            image_id = _parse_int(ial_path, lineno, fields[0], "image id")
            if image_id not in image_class:
                raise IngestError(f"{ial_path}:{lineno}: unknown image id {image_id}")
            attr_id = _check_id(
                ial_path, lineno, _parse_int(ial_path, lineno, fields[1], "attribute id"),
                n_attrs, "attribute id",
            )
            bucket = per_image[image_id]
            if attr_id not in bucket:
                bucket.append(attr_id)

    images = tuple(
        ImageAnnotation(image_id=i - 1, class_id=image_class[i], attribute_ids=tuple(per_image[i]))
        for i in sorted(image_class)
    )

    class_profiles = _cub_class_profiles(
        _cub_file(root, "class_attribute_labels_continuous.txt"), attributes, len(class_labels)
    )

    return AttributeDataset(
        name="cub",
        class_labels=class_labels,
        attributes=tuple(attributes),
        images=images,
        class_profiles=class_profiles,
        flavor=PER_IMAGE_ATTRIBUTES,
    )


def _strip_class_prefix(name: str) -> str:
    # CUB class entries look like "001.Black footed Albatross" after
    # normalization; drop the numeric prefix when present.
    head, dot, tail = name.partition(".")
    if dot and head.isdigit():
        return tail.strip()
    return name


def _cub_class_profiles(
    path: Path, attributes: list[Attribute], n_classes: int
) -> tuple[ClassAttributeProfile, ...]:
    lines = [line for line in _read_lines(path) if line.strip()]
    if len(lines) != n_classes:
        raise IngestError(f"{path}: expected {n_classes} rows, got {len(lines)}")
    profiles = []
    for class_id, line in enumerate(lines):
        fields = line.split()
        if len(fields) != len(attributes):
            raise IngestError(
                f"{path}:{class_id + 1}: expected {len(attributes)} scores, got {len(fields)}"
            )
        try:
            scores = [float(f) for f in fields]
        except ValueError:
            raise IngestError(f"{path}:{class_id + 1}: non-numeric score") from None
        best: dict[str, tuple[float, int]] = {}
        for attr, score in zip(attributes, scores):
            if score <= 0.0:
                continue
            kept = best.get(attr.description)
            if kept is None or score > kept[0]:
                best[attr.description] = (score, attr.id)
        chosen = sorted(aid for _, aid in best.values())
        profiles.append(
            ClassAttributeProfile(
                class_id=class_id,
                attribute_ids=tuple(chosen),
                scores=tuple(scores[aid] for aid in chosen),
            )
        )
    return tuple(profiles)


def load_awa2(root_dir: str | Path) -> AttributeDataset:
    """Load an AWA2-layout directory into the canonical model.

    Expects ``classes.txt``, ``predicates.txt``, ``predicate-matrix-binary.txt``
    and an explicit image index ``images.txt`` with one "image_id class_id"
    pair per line (the published archive stores images in class folders, so
    the enumeration must be provided rather than guessed). Per-image attribute
    sets start empty; the attribute detector fills them.
    """
    root = Path(root_dir)
    class_labels = tuple(_load_name_list(root / "classes.txt", "class"))
    predicate_names = _load_name_list(root / "predicates.txt", "predicate")
    attributes = tuple(
        Attribute(id=i, description=name, expression="", raw_name=name)
        for i, name in enumerate(predicate_names)
    )

    matrix_path = root / "predicate-matrix-binary.txt"
    rows = [line for line in _read_lines(matrix_path) if line.strip()]
    if len(rows) != len(class_labels):
        raise IngestError(
            f"{matrix_path}: expected {len(class_labels)} rows, got {len(rows)}"
        )
    profiles = []
    for class_id, row in enumerate(rows):
        fields = row.split()
        if len(fields) != len(attributes):
            raise IngestError(
                f"{matrix_path}:{class_id + 1}: expected {len(attributes)} entries, "
                f"got {len(fields)}"
            )
        try:
            values = [float(f) for f in fields]
        except ValueError:
            raise IngestError(f"{matrix_path}:{class_id + 1}: non-numeric entry") from None
        if any(v not in (0.0, 1.0) for v in values):
            raise IngestError(f"{matrix_path}:{class_id + 1}: non-binary entry")
        kept = tuple(i for i, v in enumerate(values) if v == 1.0)
        if not kept:
            logger.warning(
                "class %r has an all-zero predicate row; its profile is empty",
                class_labels[class_id],
            )
        profiles.append(
            ClassAttributeProfile(
                class_id=class_id, attribute_ids=kept, scores=tuple(1.0 for _ in kept)
            )
        )

    index_path = root / "images.txt"
    if not index_path.is_file():
        raise IngestError(
            f"missing dataset file: {index_path} (expected an explicit image index "
            "with one 'image_id class_id' pair per line)"
        )
    image_class: dict[int, int] = {}
    for lineno, fields in _parse_indexed(index_path, 2):
        image_id = _parse_int(index_path, lineno, fields[0], "image id")
        class_id = _check_id(
            index_path, lineno, _parse_int(index_path, lineno, fields[1], "class id"),
            len(class_labels), "class id",
        )
        if image_id in image_class:
            raise IngestError(f"{index_path}:{lineno}: duplicate image id {image_id}")
        image_class[image_id] = class_id
    if sorted(image_class) != list(range(1, len(image_class) + 1)):
        raise IngestError(f"{index_path}: image ids must be contiguous from 1")

    images = tuple(
        ImageAnnotation(image_id=i - 1, class_id=image_class[i], attribute_ids=())
        for i in sorted(image_class)
    )

    dataset = AttributeDataset(
        name="awa2",
        class_labels=class_labels,
        attributes=attributes,
        images=images,
        class_profiles=tuple(profiles),
        flavor=PER_CLASS_ATTRIBUTES,
    )
    logger.info(
        "loaded %s: %d classes, %d attributes, %d images, mean profile size %.2f",
        dataset.name, dataset.n_classes, dataset.n_attributes, len(dataset.images),
        dataset.mean_profile_size(),
    )
    return dataset


def validate(dataset: AttributeDataset) -> list[str]:
    """Return every invariant violation found in ``dataset`` (empty = valid)."""
    violations: list[str] = []
    n_classes = dataset.n_classes
    n_attrs = dataset.n_attributes

    if dataset.flavor not in (PER_IMAGE_ATTRIBUTES, PER_CLASS_ATTRIBUTES):
        violations.append(f"unknown flavor {dataset.flavor!r}")

    for i, attr in enumerate(dataset.attributes):
        if attr.id != i:
            violations.append(f"attribute at position {i} has id {attr.id}")
    pairs = [(a.description, a.expression) for a in dataset.attributes]
    seen: set[tuple[str, str]] = set()
    for pair in pairs:
        if pair in seen:
            violations.append(f"duplicate (description, expression) pair {pair!r}")
        seen.add(pair)

    for pos, img in enumerate(dataset.images):
        if img.image_id != pos:
            violations.append(f"image at position {pos} has id {img.image_id}")
        if not 0 <= img.class_id < n_classes:
            violations.append(f"image {img.image_id} references undeclared class {img.class_id}")
        if len(set(img.attribute_ids)) != len(img.attribute_ids):
            violations.append(f"image {img.image_id} repeats an attribute id")
        for aid in img.attribute_ids:
            if not 0 <= aid < n_attrs:
                violations.append(
                    f"image {img.image_id} references undeclared attribute {aid}"
                )

    if len(dataset.class_profiles) != n_classes:
        violations.append(
            f"{len(dataset.class_profiles)} class profiles for {n_classes} classes"
        )
    for profile in dataset.class_profiles:
        if not 0 <= profile.class_id < n_classes:
            violations.append(f"profile references undeclared class {profile.class_id}")
            continue
        if len(profile.attribute_ids) != len(profile.scores):
            violations.append(f"profile of class {profile.class_id} misaligns scores")
        descriptions: set[str] = set()
        for aid, score in zip(profile.attribute_ids, profile.scores):
            if not 0 <= aid < n_attrs:
                violations.append(
                    f"profile of class {profile.class_id} references undeclared attribute {aid}"
                )
                continue
            if score <= 0.0:
                violations.append(
                    f"profile of class {profile.class_id} keeps attribute {aid} "
                    f"with non-positive score {score}"
                )
            desc = dataset.attributes[aid].description
            if dataset.attributes[aid].expression and desc in descriptions:
                violations.append(
                    f"profile of class {profile.class_id} keeps two expressions "
                    f"of description {desc!r}"
                )
            descriptions.add(desc)

    if dataset.flavor == PER_CLASS_ATTRIBUTES:
        for img in dataset.images:
            if img.attribute_ids:
                violations.append(
                    f"image {img.image_id} carries attributes in a per-class-flavor dataset"
                )

    return violations


def save_dataset(dataset: AttributeDataset, path: str | Path) -> None:
    """Write the canonical newline-delimited JSON representation."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for record in _dataset_records(dataset):
            fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")


def _dataset_records(dataset: AttributeDataset) -> Iterable[dict]:
    yield {"t": "meta", "name": dataset.name, "flavor": dataset.flavor}
    for cid, label in enumerate(dataset.class_labels):
        yield {"t": "class", "id": cid, "label": label}
    for attr in dataset.attributes:
        yield {
            "t": "attr", "id": attr.id, "description": attr.description,
            "expression": attr.expression, "raw": attr.raw_name,
        }
    for img in dataset.images:
        yield {
            "t": "image", "id": img.image_id, "class": img.class_id,
            "attrs": list(img.attribute_ids),
        }
    for profile in dataset.class_profiles:
        yield {
            "t": "profile", "class": profile.class_id,
            "attrs": list(profile.attribute_ids), "scores": list(profile.scores),
        }


def load_dataset(path: str | Path) -> AttributeDataset:
    """Read a canonical newline-delimited JSON dataset written by save_dataset."""
    path = Path(path)
    meta: dict | None = None
    classes: list[tuple[int, str]] = []
    attributes: list[Attribute] = []
    images: list[ImageAnnotation] = []
    profiles: list[ClassAttributeProfile] = []
    for lineno, line in enumerate(_read_lines(path), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise IngestError(f"{path}:{lineno}: invalid JSON ({exc})") from None
        kind = record.get("t")
        if kind == "meta":
            meta = record
        elif kind == "class":
            classes.append((record["id"], record["label"]))
        elif kind == "attr":
            attributes.append(
                Attribute(
                    id=record["id"], description=record["description"],
                    expression=record["expression"], raw_name=record["raw"],
                )
            )
        elif kind == "image":
            images.append(
                ImageAnnotation(
                    image_id=record["id"], class_id=record["class"],
                    attribute_ids=tuple(record["attrs"]),
                )
            )
        elif kind == "profile":
            profiles.append(
                ClassAttributeProfile(
                    class_id=record["class"], attribute_ids=tuple(record["attrs"]),
                    scores=tuple(record["scores"]),
                )
            )
        else:
            raise IngestError(f"{path}:{lineno}: unknown record type {kind!r}")
    if meta is None:
        raise IngestError(f"{path}: missing meta record")
    classes.sort()
    images.sort(key=lambda i: i.image_id)
    profiles.sort(key=lambda p: p.class_id)
    attributes.sort(key=lambda a: a.id)
    return AttributeDataset(
        name=meta["name"],
        class_labels=tuple(label for _, label in classes),
        attributes=tuple(attributes),
        images=tuple(images),
        class_profiles=tuple(profiles),
        flavor=meta["flavor"],
    )
