"""Shared data model: examples, datasets, label vocabularies and task modes.

Examples are immutable. ``Example.sentence`` is kept exactly as read from the
corpus; normalization happens only when text is compared or serialized.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import FormatError, UnknownLabel


def normalize_text(s: str) -> str:
    """Lowercase, strip, and collapse internal whitespace runs to one space."""
    return " ".join(s.lower().split())


class Domain(str, enum.Enum):
    RESTAURANT = "restaurant"
    LAPTOP = "laptop"
    MOVIE = "movie"
    DIALOG = "dialog"


class Source(str, enum.Enum):
    SEMEVAL14 = "semeval14"
    SEMEVAL16 = "semeval16"
    SST2 = "sst2"
    SST5 = "sst5"
    OOS = "oos"


class Split(str, enum.Enum):
    TRAIN = "train"
    DEV = "dev"
    TEST = "test"


class TaskMode(str, enum.Enum):
    SINGLE_TERM = "single_term"  # SB2
    SINGLE_CATEGORY = "single_category"  # SB4
    JOINT_TERM = "joint_term"  # SB1 + SB2
    JOINT_CATEGORY = "joint_category"  # SB3 + SB4
    MULTI = "multi"  # SB1-SB4
    SENTENCE_LABEL = "sentence_label"  # SST / OOS

    @property
    def is_single(self) -> bool:
        return self in (TaskMode.SINGLE_TERM, TaskMode.SINGLE_CATEGORY)

    @property
    def is_joint(self) -> bool:
        return self in (TaskMode.JOINT_TERM, TaskMode.JOINT_CATEGORY, TaskMode.MULTI)

    @property
    def uses_terms(self) -> bool:
        return self in (TaskMode.SINGLE_TERM, TaskMode.JOINT_TERM, TaskMode.MULTI)

    @property
    def uses_categories(self) -> bool:
        return self in (TaskMode.SINGLE_CATEGORY, TaskMode.JOINT_CATEGORY, TaskMode.MULTI)


@dataclass(frozen=True)
class Polarity:
    label: str

    def __str__(self) -> str:
        return self.label


@dataclass(frozen=True)
class PolaritySet:
    """A closed, ordered label vocabulary.

    Order matters only for the classifier ablation, where a label's position
    is its class index.
    """

    labels: tuple[str, ...]
    name: str = ""

    def __post_init__(self) -> None:
        normed = tuple(normalize_text(l) for l in self.labels)
        if not normed or any(not l for l in normed):
            raise ValueError("a PolaritySet needs at least one non-empty label")
        if len(set(normed)) != len(normed):
            raise ValueError(f"duplicate labels in {self.labels!r}")
        object.__setattr__(self, "labels", normed)

    def __contains__(self, label: object) -> bool:
        if isinstance(label, Polarity):
            label = label.label
        return isinstance(label, str) and normalize_text(label) in self.labels

    def __iter__(self) -> Iterator[Polarity]:
        return (Polarity(l) for l in self.labels)

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, label: str | Polarity) -> int:
        if isinstance(label, Polarity):
            label = label.label
        return self.labels.index(normalize_text(label))


ABSA_LABELS = PolaritySet(("positive", "negative", "neutral", "conflict"), name="absa")
SST2_LABELS = PolaritySet(("negative", "positive"), name="sst2")
SST5_LABELS = PolaritySet(
    ("negative", "somewhat negative", "neutral", "somewhat positive", "positive"),
    name="sst5",
)


def polarity_parse(s: str, labels: PolaritySet) -> Polarity:
    """Map ``s`` onto the member of ``labels`` equal to ``normalize_text(s)``."""
    key = normalize_text(s)
    if key in labels.labels:
        return Polarity(key)
    raise UnknownLabel(f"{s!r} is not one of {list(labels.labels)}")


@dataclass(frozen=True)
class TermPair:
    term: str
    polarity: Polarity

    def __post_init__(self) -> None:
        if not normalize_text(self.term):
            raise ValueError("aspect term is empty")


@dataclass(frozen=True)
class CategoryPair:
    category: str
    polarity: Polarity

    def __post_init__(self) -> None:
        if not normalize_text(self.category):
            raise ValueError("aspect category is empty")


@dataclass(frozen=True)
class Example:
    id: str
    sentence: str
    terms: tuple[TermPair, ...] = ()
    categories: tuple[CategoryPair, ...] = ()
    sentence_label: Polarity | None = None
    domain: Domain = Domain.RESTAURANT
    source: Source = Source.SEMEVAL14

    def __post_init__(self) -> None:
        if not self.sentence or not self.sentence.strip():
            raise ValueError(f"example {self.id!r} has an empty sentence")
        if self.sentence_label is not None and (self.terms or self.categories):
            raise ValueError(
                f"example {self.id!r}: sentence_label cannot coexist with term/category pairs"
            )
        object.__setattr__(self, "terms", tuple(self.terms))
        object.__setattr__(self, "categories", tuple(self.categories))
        object.__setattr__(self, "domain", Domain(self.domain))
        object.__setattr__(self, "source", Source(self.source))

    # Whether the example's corpus carries each annotation kind at all (an
    # example may still have zero pairs). SemEval14 laptop has no categories;
    # SemEval16 laptop has no opinion target expressions.
    @property
    def has_terms(self) -> bool:
        if self.source == Source.SEMEVAL14:
            return True
        return self.source == Source.SEMEVAL16 and self.domain == Domain.RESTAURANT

    @property
    def has_categories(self) -> bool:
        if self.source == Source.SEMEVAL16:
            return True
        return self.source == Source.SEMEVAL14 and self.domain == Domain.RESTAURANT


@dataclass(frozen=True)
class Dataset:
    name: str
    examples: tuple[Example, ...] = field(default_factory=tuple)
    split: Split = Split.TRAIN

    def __post_init__(self) -> None:
        object.__setattr__(self, "examples", tuple(self.examples))
        object.__setattr__(self, "split", Split(self.split))
        seen: set[str] = set()
        for ex in self.examples:
            if ex.id in seen:
                raise ValueError(f"duplicate example id {ex.id!r} in {self.name}/{self.split.value}")
            seen.add(ex.id)

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self) -> Iterator[Example]:
        return iter(self.examples)

    def by_id(self) -> dict[str, Example]:
        return {ex.id: ex for ex in self.examples}

    def subset(self, ids: Iterable[str]) -> "Dataset":
        keep = set(ids)
        return Dataset(self.name, tuple(ex for ex in self.examples if ex.id in keep), self.split)


def infer_labels(dataset: Dataset | Iterable[Example], name: str = "") -> PolaritySet:
    """Collect the distinct labels (sentence labels and pair polarities) in first-seen order."""
    seen: dict[str, None] = {}
    for ex in dataset:
        if ex.sentence_label is not None:
            seen.setdefault(ex.sentence_label.label, None)
        for p in ex.terms:
            seen.setdefault(p.polarity.label, None)
        for p in ex.categories:
            seen.setdefault(p.polarity.label, None)
    if not seen:
        raise ValueError("no labels found")
    return PolaritySet(tuple(seen), name=name)


# --- JSONL interchange ------------------------------------------------------


def example_to_dict(ex: Example) -> dict:
    return {
        "id": ex.id,
        "sentence": ex.sentence,
        "terms": [[p.term, p.polarity.label] for p in ex.terms],
        "categories": [[p.category, p.polarity.label] for p in ex.categories],
        "sentence_label": ex.sentence_label.label if ex.sentence_label else None,
        "domain": ex.domain.value,
        "source": ex.source.value,
    }


def example_from_dict(d: dict) -> Example:
    try:
        label = d.get("sentence_label")
        return Example(
            id=str(d["id"]),
            sentence=d["sentence"],
            terms=tuple(TermPair(t, Polarity(normalize_text(p))) for t, p in d.get("terms") or ()),
            categories=tuple(
                CategoryPair(c, Polarity(normalize_text(p))) for c, p in d.get("categories") or ()
            ),
            sentence_label=Polarity(normalize_text(label)) if label is not None else None,
            domain=d["domain"],
            source=d["source"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad example record {d!r}: {exc}") from exc


def dumps_examples(examples: Iterable[Example]) -> str:
    return "".join(json.dumps(example_to_dict(ex), ensure_ascii=False) + "\n" for ex in examples)


def write_jsonl(dataset: Dataset | Iterable[Example], path: str | Path) -> None:
    Path(path).write_text(dumps_examples(dataset), encoding="utf-8")


def read_jsonl(path: str | Path, name: str | None = None, split: Split | str = Split.TRAIN) -> Dataset:
    path = Path(path)
    examples = []
    with path.open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
            examples.append(example_from_dict(record))
    return Dataset(name or path.stem, tuple(examples), split)


# --- predictions --------------------------------------------------------------


@dataclass(frozen=True)
class PredictionRecord:
    """Structured output parsed from one generation (or one classifier call).

    ``pairs`` holds (text, label) pairs of the mode's segment: term pairs for
    term modes, category pairs for category modes. Multi mode puts term pairs
    in ``pairs`` and category pairs in ``categories``. Single-task and
    sentence-label predictions carry their answer in ``label``; single-task
    records also carry the queried ``target``.
    """

    example_id: str
    mode: TaskMode
    pairs: tuple[tuple[str, str], ...] = ()
    categories: tuple[tuple[str, str], ...] = ()
    label: str | None = None
    target: str | None = None
    parse_failures: tuple[str, ...] = ()
    truncated: bool = False
    ambiguous: tuple[str, ...] = ()
    raw: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", TaskMode(self.mode))
        object.__setattr__(self, "pairs", tuple(tuple(p) for p in self.pairs))
        object.__setattr__(self, "categories", tuple(tuple(p) for p in self.categories))
        object.__setattr__(self, "parse_failures", tuple(self.parse_failures))
        object.__setattr__(self, "ambiguous", tuple(self.ambiguous))

    def to_dict(self) -> dict:
        return {
            "example_id": self.example_id,
            "mode": self.mode.value,
            "pairs": [list(p) for p in self.pairs],
            "categories": [list(p) for p in self.categories],
            "label": self.label,
            "target": self.target,
            "parse_failures": list(self.parse_failures),
            "truncated": self.truncated,
            "ambiguous": list(self.ambiguous),
            "raw": self.raw,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PredictionRecord":
        try:
            pairs = [tuple(p) for p in d.get("pairs") or ()]
            categories = [tuple(p) for p in d.get("categories") or ()]
            if any(len(p) != 2 for p in pairs + categories):
                raise ValueError("pairs must be [text, label] lists")
            return cls(
                example_id=str(d["example_id"]),
                mode=TaskMode(d["mode"]),
                pairs=tuple(pairs),
                categories=tuple(categories),
                label=d.get("label"),
                target=d.get("target"),
                parse_failures=tuple(d.get("parse_failures") or ()),
                truncated=bool(d.get("truncated", False)),
                ambiguous=tuple(d.get("ambiguous") or ()),
                raw=d.get("raw") or "",
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad prediction record {d!r}: {exc}") from exc


def write_predictions(records: Iterable[PredictionRecord], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r.to_dict(), ensure_ascii=False) + "\n")


def read_predictions(path: str | Path) -> list[PredictionRecord]:
    path = Path(path)
    out = []
    with path.open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
            if not isinstance(record, dict):
                raise FormatError(f"{path}:{lineno}: expected a JSON object")
            out.append(PredictionRecord.from_dict(record))
    return out
