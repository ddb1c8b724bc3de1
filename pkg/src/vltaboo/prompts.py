"""Deterministic rendering of class labels and attribute lists into prompts.

Every renderer is a pure function: identical grammar, label, and attribute
order yield byte-identical text. Prompts carry their class id and attribute
ids as structural tags so synthetic backends can score them without parsing
text.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .datasets import Attribute

CUB_STYLE = "cub_style"
AWA2_COMMA_LIST = "awa2_comma_list"
CONTENT_BASED = "content_based"
CLASS_ONLY = "class_only"
NO_CLASS_BASE = "no_class_base"

GRAMMAR_KINDS = (CUB_STYLE, AWA2_COMMA_LIST, CONTENT_BASED, CLASS_ONLY, NO_CLASS_BASE)

SLOTS = ("quantifier", "adjective", "verb_clause", "body_part", "habitat")

_VOWELS = "aeiou"


class PromptError(ValueError):
    """Raised for grammar misuse (missing label, missing slot, bad input)."""


@dataclass(frozen=True)
class SlotTable:
    """Maps attribute names to content slots for the content-based grammar."""

    slots: dict[str, str] = field(default_factory=dict)

    def slot_of(self, attribute_name: str) -> str:
        try:
            slot = self.slots[attribute_name]
        except KeyError:
            raise PromptError(f"no slot assigned for attribute {attribute_name!r}") from None
        if slot not in SLOTS:
            raise PromptError(f"unknown slot {slot!r} for attribute {attribute_name!r}")
        return slot

    @classmethod
    def load(cls, path: str | Path) -> "SlotTable":
        """Read a "name<TAB>slot" file, one attribute per line."""
        slots: dict[str, str] = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            name, sep, slot = line.partition("\t")
            if not sep:
                raise PromptError(f"{path}:{lineno}: expected 'name<TAB>slot'")
            slots[name.strip()] = slot.strip()
        return cls(slots=slots)

    def save(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for name, slot in self.slots.items():
                fh.write(f"{name}\t{slot}\n")


@dataclass(frozen=True)
class PromptGrammar:
    """How attributes are phrased around a class label or a base noun.

    ``fix_articles`` opts into a/an correction for class labels; off by
    default so generated text matches the published prompt strings verbatim
    ("a photo of a antelope").
    """

    kind: str
    base_noun: str = "animal"
    fix_articles: bool = False
    slot_table: SlotTable | None = None

    def __post_init__(self) -> None:
        if self.kind not in GRAMMAR_KINDS:
            raise PromptError(f"unknown grammar kind {self.kind!r}")
        if self.kind == CONTENT_BASED and self.slot_table is None:
            raise PromptError("content_based grammar requires a slot table")


@dataclass(frozen=True)
class Prompt:
    """Rendered text plus the structural tags it was rendered from."""

    text: str
    class_id: int | None
    attribute_ids: tuple[int, ...]
    grammar: str


def _article(noun: str, fix: bool) -> str:
    if fix and noun[:1].lower() in _VOWELS:
        return "an"
    return "a"


def _attribute_phrase(attr: Attribute) -> str:
    if attr.expression:
        return f"{attr.description} {attr.expression}"
    return attr.description


def _head(grammar: PromptGrammar, class_label: str | None) -> str:
    if class_label is None:
        # Base nouns always take the correct article ("an animal", "a bird").
        return f"a photo of {_article(grammar.base_noun, True)} {grammar.base_noun}"
    return f"a photo of {_article(class_label, grammar.fix_articles)} {class_label}"


def render(
    grammar: PromptGrammar,
    class_label: str | None,
    attrs: Sequence[Attribute],
    *,
    class_id: int | None = None,
) -> Prompt:
    """Render one prompt; attribute order is preserved exactly as supplied."""
    if grammar.kind == NO_CLASS_BASE and class_label is not None:
        raise PromptError("no_class_base grammar forbids a class label")
    if grammar.kind == CLASS_ONLY:
        if class_label is None:
            raise PromptError("class_only grammar requires a class label")
        if attrs:
            raise PromptError("class_only grammar takes no attributes")
    if class_label is not None and class_id is None:
        raise PromptError("labelled prompts must carry the class id tag")

    if grammar.kind == CONTENT_BASED:
        text = _render_content_based(grammar, class_label, attrs)
    else:
        text = _head(grammar, class_label)
        if attrs:
            comma_style = grammar.kind == AWA2_COMMA_LIST or (
                grammar.kind == NO_CLASS_BASE and all(a.expression == "" for a in attrs)
            )
            if comma_style:
                text += " with attributes " + ", ".join(
                    _attribute_phrase(a) for a in attrs
                )
            else:
                text += "".join(f" that {_attribute_phrase(a)}" for a in attrs)

    return Prompt(
        text=text,
        class_id=class_id if class_label is not None else None,
        attribute_ids=tuple(a.id for a in attrs),
        grammar=grammar.kind,
    )


def _render_content_based(
    grammar: PromptGrammar, class_label: str | None, attrs: Sequence[Attribute]
) -> str:
    assert grammar.slot_table is not None
    buckets: dict[str, list[str]] = {slot: [] for slot in SLOTS}
    for attr in attrs:
        buckets[grammar.slot_table.slot_of(attr.description)].append(attr.description)

    noun = class_label if class_label is not None else grammar.base_noun
    fix = grammar.fix_articles if class_label is not None else True
    parts = [f"a photo of {_article(noun, fix)}"]
    if buckets["quantifier"]:
        parts.append(" ".join(buckets["quantifier"]) + " of")
    if buckets["adjective"]:
        parts.append(" ".join(buckets["adjective"]))
    parts.append(noun)
    text = " ".join(parts)
    for verb in buckets["verb_clause"]:
        text += f" that {verb}"
    for part in buckets["body_part"]:
        text += f" that has {part}"
    if buckets["habitat"]:
        text += " and is in " + " or ".join(buckets["habitat"])
    return text


DETECTION_GRAMMAR = "detection"

_DETECTION_TEMPLATES = (
    "a photo of a {z} animal",
    "a picture of a {z} animal",
    "a photograph of a {z} animal",
)


def render_detection_prompts(attr: Attribute) -> tuple[Prompt, Prompt, Prompt]:
    """The three fixed phrasings used to probe one single-token attribute."""
    if attr.expression:
        raise PromptError(
            f"detection prompts expect single-token attributes, got expression "
            f"{attr.expression!r}"
        )
    if not attr.description:
        raise PromptError("attribute text is empty")
    return tuple(  # type: ignore[return-value]
        Prompt(
            text=template.format(z=attr.description),
            class_id=None,
            attribute_ids=(attr.id,),
            grammar=DETECTION_GRAMMAR,
        )
        for template in _DETECTION_TEMPLATES
    )


def dump_prompts(prompts: Iterable[Prompt], path: str | Path) -> None:
    """Write prompts as newline-delimited JSON for audits."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for p in prompts:
            fh.write(
                json.dumps(
                    {
                        "text": p.text,
                        "class": p.class_id,
                        "attribute_ids": list(p.attribute_ids),
                        "grammar": p.grammar,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_prompts(path: str | Path) -> list[Prompt]:
    prompts = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        prompts.append(
            Prompt(
                text=record["text"],
                class_id=record["class"],
                attribute_ids=tuple(record["attribute_ids"]),
                grammar=record["grammar"],
            )
        )
    return prompts
