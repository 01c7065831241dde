"""Render examples as identifier-delimited text and parse generations back.

A joint aspect-term training sequence looks like::

    <|review|> the food was great <|endofreview|> <|term|> food positive <|endofterm|>

Identifiers are plain strings. They go through the model's ordinary
tokenizer as several sub-word tokens and are never added to the vocabulary.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field

from .core_types import (
    Example,
    PolaritySet,
    PredictionRecord,
    Source,
    TaskMode,
    normalize_text,
)
from .errors import (
    IncompatibleMode,
    MarkerInText,
    MissingTarget,
    UnexpectedTarget,
    UnknownCategory,
)

SEGMENTS = ("review", "term", "category", "sentiment", "user", "intent")


@dataclass(frozen=True)
class IdentifierSet:
    markers: dict[str, tuple[str, str]] = field(
        default_factory=lambda: {seg: (f"<|{seg}|>", f"<|endof{seg}|>") for seg in SEGMENTS}
    )
    pair_separator: str = " , "

    def open(self, segment: str) -> str:
        return self.markers[segment][0]

    def close(self, segment: str) -> str:
        return self.markers[segment][1]

    def all_markers(self) -> list[str]:
        return [m for pair in self.markers.values() for m in pair]


IDENTIFIERS = IdentifierSet()

# Flags recorded in run manifests so a reader knows how sequences were built.
CODEC_FLAGS = {
    "identifier_style": "<|segment|> ... <|endofsegment|>",
    "pair_separator": IDENTIFIERS.pair_separator,
    "lowercase": True,
    "empty_segments_rendered": True,
    "single_mode_skips_pairless_examples": True,
    "label_matching": "longest whole-word label suffix per fragment",
}


@dataclass(frozen=True)
class TaskSequence:
    """Rendered text for training (``role == "train"``) or inference (``"prompt"``).

    ``label_spans`` are character offsets of every polarity label realised in
    ``text``; the backend uses them for the label-position loss probe.
    """

    text: str
    example_id: str
    task_mode: TaskMode
    role: str
    stop_string: str
    target: str | None = None
    label_spans: tuple[tuple[int, int], ...] = ()

    def to_dict(self) -> dict:
        return {
            "example_id": self.example_id,
            "mode": self.task_mode.value,
            "role": self.role,
            "text": self.text,
            "stop_string": self.stop_string,
            "target": self.target,
            "label_spans": [list(s) for s in self.label_spans],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSequence":
        return cls(
            text=d["text"],
            example_id=str(d["example_id"]),
            task_mode=TaskMode(d["mode"]),
            role=d["role"],
            stop_string=d["stop_string"],
            target=d.get("target"),
            label_spans=tuple(tuple(s) for s in d.get("label_spans") or ()),
        )


# --- categories -----------------------------------------------------------

SEMEVAL14_RESTAURANT_CATEGORIES = ("ambience", "anecdotes/miscellaneous", "food", "price", "service")

# Official SemEval16 entity and attribute vocabularies (English, sentence level).
SEMEVAL16_ENTITIES = {
    "restaurant": ("AMBIENCE", "DRINKS", "FOOD", "LOCATION", "RESTAURANT", "SERVICE"),
    "laptop": (
        "BATTERY", "COMPANY", "CPU", "DISPLAY", "FANS_COOLING", "GRAPHICS", "HARD_DISC",
        "HARDWARE", "KEYBOARD", "LAPTOP", "MEMORY", "MOTHERBOARD", "MOUSE",
        "MULTIMEDIA_DEVICES", "OPTICAL_DRIVES", "OS", "PORTS", "POWER_SUPPLY", "SHIPPING",
        "SOFTWARE", "SUPPORT", "WARRANTY",
    ),
}
SEMEVAL16_ATTRIBUTES = {
    "restaurant": ("GENERAL", "PRICES", "QUALITY", "STYLE_OPTIONS", "MISCELLANEOUS"),
    "laptop": (
        "CONNECTIVITY", "DESIGN_FEATURES", "GENERAL", "MISCELLANEOUS",
        "OPERATION_PERFORMANCE", "PORTABILITY", "PRICE", "QUALITY", "USABILITY",
    ),
}

_CATEGORY_PUNCT = re.compile(r"[#_/]")


def render_category(entity: str, attribute: str | None = None) -> str:
    """Turn an official category (``FOOD``, ``QUALITY``) into text (``food quality``)."""
    if not entity or not entity.strip():
        raise ValueError("category entity is empty")
    parts = [entity] if attribute is None else [entity, attribute]
    return normalize_text(" ".join(_CATEGORY_PUNCT.sub(" ", p) for p in parts))


def category_inventory(source: Source | str, domain: str) -> dict[str, str]:
    """Rendered category -> official name, for one corpus and domain."""
    source = Source(source)
    domain = getattr(domain, "value", domain)
    if source == Source.SEMEVAL14:
        if domain != "restaurant":
            return {}
        return {render_category(c): c for c in SEMEVAL14_RESTAURANT_CATEGORIES}
    if source == Source.SEMEVAL16:
        out = {}
        for ent, attr in itertools.product(SEMEVAL16_ENTITIES[domain], SEMEVAL16_ATTRIBUTES[domain]):
            out[render_category(ent, attr)] = f"{ent}#{attr}"
        return out
    return {}


def split_official_category(category: str, source: Source | str, domain: str) -> tuple[str, str | None]:
    """Validate an official category string and split it into (entity, attribute)."""
    source = Source(source)
    domain = getattr(domain, "value", domain)
    if source == Source.SEMEVAL14:
        if category.lower() not in SEMEVAL14_RESTAURANT_CATEGORIES:
            raise UnknownCategory(f"{category!r} is not a SemEval14 {domain} category")
        return category.lower(), None
    entity, sep, attribute = category.upper().partition("#")
    if not sep:
        raise UnknownCategory(f"{category!r} lacks the ENTITY#ATTRIBUTE form")
    if entity not in SEMEVAL16_ENTITIES.get(domain, ()):
        raise UnknownCategory(f"unknown {domain} entity {entity!r} in {category!r}")
    if attribute not in SEMEVAL16_ATTRIBUTES.get(domain, ()):
        raise UnknownCategory(f"unknown {domain} attribute {attribute!r} in {category!r}")
    return entity, attribute


def unrender_category(rendered: str, source: Source | str, domain: str) -> str:
    """Inverse of :func:`render_category` against the corpus inventory (for reports)."""
    inventory = category_inventory(source, domain)
    try:
        return inventory[normalize_text(rendered)]
    except KeyError:
        raise UnknownCategory(f"{rendered!r} is not in the {Source(source).value} {domain} inventory") from None


# --- encoding ---------------------------------------------------------------


def _clean(s: str, lowercase: bool = True) -> str:
    return normalize_text(s) if lowercase else " ".join(s.split())


def _check_text(s: str, what: str, ids: IdentifierSet) -> None:
    if "<|" in s or "|>" in s:
        raise MarkerInText(f"{what} contains an identifier marker: {s!r}")


def _check_item(s: str, what: str, ids: IdentifierSet) -> None:
    _check_text(s, what, ids)
    # a whitespace-delimited comma would be read back as the pair separator
    if re.search(r"\s,\s", s):
        raise MarkerInText(f"{what} contains the pair separator: {s!r}")


def _sentence_segment(ex: Example) -> str:
    return "user" if ex.source == Source.OOS else "review"


def _label_segment(ex: Example) -> str:
    return "intent" if ex.source == Source.OOS else "sentiment"


def stop_string_for(mode: TaskMode, example: Example | None = None, ids: IdentifierSet = IDENTIFIERS) -> str:
    mode = TaskMode(mode)
    if mode in (TaskMode.SINGLE_TERM, TaskMode.JOINT_TERM):
        return ids.close("term")
    if mode in (TaskMode.SINGLE_CATEGORY, TaskMode.JOINT_CATEGORY, TaskMode.MULTI):
        return ids.close("category")
    seg = _label_segment(example) if example is not None else "sentiment"
    return ids.close(seg)


def check_mode(example: Example, mode: TaskMode) -> None:
    """Raise IncompatibleMode when ``example`` cannot be rendered under ``mode``."""
    mode = TaskMode(mode)
    if mode == TaskMode.SENTENCE_LABEL:
        if example.sentence_label is None:
            raise IncompatibleMode(f"example {example.id!r} has no sentence label")
        return
    if example.sentence_label is not None:
        raise IncompatibleMode(f"example {example.id!r} is sentence-labelled; {mode.value} needs aspects")
    if mode.uses_terms and not example.has_terms:
        raise IncompatibleMode(
            f"{example.source.value} {example.domain.value} has no aspect-term annotation ({mode.value})"
        )
    if mode.uses_categories and not example.has_categories:
        raise IncompatibleMode(
            f"{example.source.value} {example.domain.value} has no aspect-category annotation ({mode.value})"
        )


class _Builder:
    """Accumulates text pieces joined by single spaces, tracking label offsets."""

    def __init__(self) -> None:
        self.parts: list[str] = []
        self.length = 0
        self.spans: list[tuple[int, int]] = []

    def add(self, piece: str, is_label: bool = False) -> None:
        if self.parts:
            self.length += 1
        start = self.length
        self.parts.append(piece)
        self.length += len(piece)
        if is_label:
            self.spans.append((start, self.length))

    def add_pairs(self, pairs: list[tuple[str, str]], sep: str) -> None:
        for i, (item, label) in enumerate(pairs):
            if i:
                self.add(sep.strip())
            self.add(item)
            self.add(label, is_label=True)

    def text(self) -> str:
        return " ".join(self.parts)


def _rendered_pairs(ex: Example, segment: str, lowercase: bool, ids: IdentifierSet) -> list[tuple[str, str]]:
    src = ex.terms if segment == "term" else ex.categories
    out = []
    for p in src:
        item = _clean(p.term if segment == "term" else p.category, lowercase)
        label = _clean(p.polarity.label, lowercase)
        _check_item(item, f"{segment} of {ex.id}", ids)
        _check_item(label, f"label of {ex.id}", ids)
        out.append((item, label))
    return out


def _start(ex: Example, lowercase: bool, ids: IdentifierSet) -> _Builder:
    sentence = _clean(ex.sentence, lowercase)
    _check_text(sentence, f"sentence of {ex.id}", ids)
    seg = _sentence_segment(ex)
    b = _Builder()
    b.add(ids.open(seg))
    b.add(sentence)
    b.add(ids.close(seg))
    return b


def _segment_sequence(
    ex: Example, segments: list[tuple[str, list[tuple[str, str]]]], mode: TaskMode, lowercase: bool, ids: IdentifierSet
) -> TaskSequence:
    b = _start(ex, lowercase, ids)
    for seg, pairs in segments:
        b.add(ids.open(seg))
        b.add_pairs(pairs, ids.pair_separator)
        b.add(ids.close(seg))
    return TaskSequence(
        text=b.text(),
        example_id=ex.id,
        task_mode=mode,
        role="train",
        stop_string=stop_string_for(mode, ex, ids),
        label_spans=tuple(b.spans),
    )


def encode_training(
    example: Example,
    mode: TaskMode,
    split: bool = False,
    *,
    lowercase: bool = True,
    ids: IdentifierSet = IDENTIFIERS,
) -> list[TaskSequence]:
    """Render the training sequence(s) for one example.

    With ``split=True`` the sentence is paired with one aspect pair per
    sequence. Single-task modes yield nothing for an example without pairs;
    joint and multi modes render an empty segment so the model learns to
    produce no pairs.
    """
    mode = TaskMode(mode)
    check_mode(example, mode)

    if mode == TaskMode.SENTENCE_LABEL:
        seg = _label_segment(example)
        label = _clean(example.sentence_label.label, lowercase)
        _check_item(label, f"label of {example.id}", ids)
        b = _start(example, lowercase, ids)
        b.add(ids.open(seg))
        b.add(label, is_label=True)
        b.add(ids.close(seg))
        return [
            TaskSequence(
                text=b.text(),
                example_id=example.id,
                task_mode=mode,
                role="train",
                stop_string=ids.close(seg),
                label_spans=tuple(b.spans),
            )
        ]

    if mode == TaskMode.MULTI:
        terms = _rendered_pairs(example, "term", lowercase, ids)
        cats = _rendered_pairs(example, "category", lowercase, ids)
        if not split or not (terms or cats):
            return [_segment_sequence(example, [("term", terms), ("category", cats)], mode, lowercase, ids)]
        return [_segment_sequence(example, [("term", [p])], mode, lowercase, ids) for p in terms] + [
            _segment_sequence(example, [("category", [p])], mode, lowercase, ids) for p in cats
        ]

    segment = "term" if mode.uses_terms else "category"
    pairs = _rendered_pairs(example, segment, lowercase, ids)
    if not pairs and mode.is_single:
        return []
    if not split or not pairs:
        return [_segment_sequence(example, [(segment, pairs)], mode, lowercase, ids)]
    return [_segment_sequence(example, [(segment, [p])], mode, lowercase, ids) for p in pairs]


def encode_prompt(
    example: Example,
    mode: TaskMode,
    target: str | None = None,
    *,
    lowercase: bool = True,
    ids: IdentifierSet = IDENTIFIERS,
) -> TaskSequence:
    """Render the inference prompt; single-task modes take the queried term/category."""
    mode = TaskMode(mode)
    check_mode(example, mode)
    if mode.is_single and target is None:
        raise MissingTarget(f"{mode.value} prompt for {example.id!r} needs a target")
    if not mode.is_single and target is not None:
        raise UnexpectedTarget(f"{mode.value} prompt for {example.id!r} takes no target")

    b = _start(example, lowercase, ids)
    clean_target = None
    if mode.is_single:
        clean_target = _clean(target, lowercase)
        _check_item(clean_target, f"target of {example.id}", ids)
        b.add(ids.open("term" if mode == TaskMode.SINGLE_TERM else "category"))
        b.add(clean_target)
    elif mode == TaskMode.SENTENCE_LABEL:
        b.add(ids.open(_label_segment(example)))
    return TaskSequence(
        text=b.text(),
        example_id=example.id,
        task_mode=mode,
        role="prompt",
        stop_string=stop_string_for(mode, example, ids),
        target=clean_target,
    )


def prompts_for(example: Example, mode: TaskMode, **kw) -> list[TaskSequence]:
    """All inference prompts for an example: one per gold target in single-task modes."""
    mode = TaskMode(mode)
    if mode == TaskMode.SINGLE_TERM:
        return [encode_prompt(example, mode, p.term, **kw) for p in example.terms]
    if mode == TaskMode.SINGLE_CATEGORY:
        return [encode_prompt(example, mode, p.category, **kw) for p in example.categories]
    return [encode_prompt(example, mode, **kw)]


# --- decoding ---------------------------------------------------------------

_CANON_SEP = re.compile(r"\s+,\s+")
_LOOSE_SEP = re.compile(r"\s*,\s*")
_WORD = re.compile(r"[^\s,]+")


def _label_words(labels: PolaritySet) -> list[tuple[str, list[str]]]:
    # longest label first so "somewhat positive" beats "positive"
    return sorted(((l, l.split(" ")) for l in labels.labels), key=lambda t: -len(t[1]))


def _suffix_split(fragment: str, labels: PolaritySet) -> tuple[str, str] | None:
    words = normalize_text(fragment).split(" ")
    for label, lw in _label_words(labels):
        n = len(lw)
        if len(words) > n and words[-n:] == lw:
            return " ".join(words[:-n]), label
    return None


def _ends_with_label(text: str, labels: PolaritySet) -> bool:
    words = text.split(" ")
    return any(len(words) >= len(lw) and words[-len(lw):] == lw for _, lw in _label_words(labels))


def _parse_body(body: str, labels: PolaritySet) -> tuple[list[tuple[str, str]], list[str], list[str]]:
    pairs: list[tuple[str, str]] = []
    failures: list[str] = []
    ambiguous: list[str] = []
    if not normalize_text(body):
        return pairs, failures, ambiguous
    for fragment in _CANON_SEP.split(body.strip()):
        norm = normalize_text(fragment)
        if not norm:
            continue
        parsed: list[tuple[str, str]] | None = None
        pieces = [p for p in _LOOSE_SEP.split(norm) if p]
        if len(pieces) > 1:
            # "host positive, bartender neutral": bare commas between pairs
            sub = [_suffix_split(p, labels) for p in pieces]
            if all(sub):
                parsed = sub
        if parsed is None:
            hit = _suffix_split(norm, labels)
            parsed = [hit] if hit else None
        if parsed is None:
            failures.append(norm)
            continue
        for item, label in parsed:
            if _ends_with_label(item, labels):
                ambiguous.append(f"{item} {label}")
            pairs.append((item, label))
    return pairs, failures, ambiguous


def _first_label(text: str, labels: PolaritySet) -> str | None:
    words = _WORD.findall(normalize_text(text))
    ordered = _label_words(labels)
    for i in range(len(words)):
        for label, lw in ordered:
            if words[i : i + len(lw)] == lw:
                return label
    return None


def _after(text: str, marker: str) -> str:
    i = text.find(marker)
    return text if i < 0 else text[i + len(marker) :]


def decode_pairs(
    generated: str,
    mode: TaskMode,
    labels: PolaritySet,
    *,
    example_id: str = "",
    target: str | None = None,
    ids: IdentifierSet = IDENTIFIERS,
) -> PredictionRecord:
    """Parse a generated continuation (prompt excluded) into a PredictionRecord.

    Never raises on malformed generations: unparseable fragments land in
    ``parse_failures`` and a missing close marker sets ``truncated``.
    """
    mode = TaskMode(mode)
    if mode == TaskMode.SENTENCE_LABEL:
        closes = [ids.close("sentiment"), ids.close("intent")]
    else:
        closes = [stop_string_for(mode, None, ids)]
    hits = [i for i in (generated.find(c) for c in closes) if i >= 0]
    truncated = not hits
    text = generated if truncated else generated[: min(hits)]

    if mode.is_single or mode == TaskMode.SENTENCE_LABEL:
        label = _first_label(text, labels)
        failures = () if label is not None else (normalize_text(text),)
        pairs = ((normalize_text(target), label),) if (mode.is_single and label and target is not None) else ()
        return PredictionRecord(
            example_id=example_id,
            mode=mode,
            pairs=pairs,
            label=label,
            target=normalize_text(target) if target is not None else None,
            parse_failures=failures,
            truncated=truncated,
            raw=generated,
        )

    if mode == TaskMode.MULTI:
        o_term, c_term, o_cat = ids.open("term"), ids.close("term"), ids.open("category")
        failures: list[str] = []
        term_part, cat_part = "", ""
        has_term, has_cat = o_term in text, o_cat in text
        if has_term:
            term_part = _after(text, o_term)
            if c_term in term_part:
                term_part, rest = term_part.split(c_term, 1)
            else:
                failures.append(f"missing {c_term}")
                rest = term_part
                term_part = term_part.split(o_cat, 1)[0]
            if has_cat:
                cat_part = _after(rest, o_cat)
        elif has_cat:
            cat_part = _after(text, o_cat)
        else:
            term_part = text
        t_pairs, t_fail, t_amb = _parse_body(term_part, labels)
        c_pairs, c_fail, c_amb = _parse_body(cat_part, labels)
        return PredictionRecord(
            example_id=example_id,
            mode=mode,
            pairs=tuple(t_pairs),
            categories=tuple(c_pairs),
            parse_failures=tuple(failures + t_fail + c_fail),
            truncated=truncated,
            ambiguous=tuple(t_amb + c_amb),
            raw=generated,
        )

    segment = "term" if mode == TaskMode.JOINT_TERM else "category"
    body = _after(text, ids.open(segment))
    pairs, failures, ambiguous = _parse_body(body, labels)
    return PredictionRecord(
        example_id=example_id,
        mode=mode,
        pairs=tuple(pairs),
        parse_failures=tuple(failures),
        truncated=truncated,
        ambiguous=tuple(ambiguous),
        raw=generated,
    )


def continuation(train_seq: TaskSequence, prompt: TaskSequence) -> str:
    """The part of a training sequence a model is expected to generate after ``prompt``."""
    if not train_seq.text.startswith(prompt.text):
        raise ValueError(f"prompt is not a prefix of the training sequence for {train_seq.example_id!r}")
    return train_seq.text[len(prompt.text) :]
