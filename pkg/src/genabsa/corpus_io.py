"""Readers for SemEval14/16 XML, SST label/sentence files and the OOS JSON.

All readers return ``{split: Dataset}`` built from canonical Examples, and
keep ``conflict`` polarities.
"""

from __future__ import annotations

import json
import logging
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path

from .core_types import (
    ABSA_LABELS,
    CategoryPair,
    Dataset,
    Domain,
    Example,
    Polarity,
    PolaritySet,
    Source,
    Split,
    TermPair,
    polarity_parse,
)
from .errors import EmptySplit, MalformedCorpus, SchemaViolation, TrialNotSubset, UnknownLabel
from .seqcodec import render_category, split_official_category

log = logging.getLogger(__name__)

# Numeric SST label conventions (as in the PTB-tree releases).
SST_NUMERIC_LABELS = {
    Source.SST2: {"0": "negative", "1": "positive"},
    Source.SST5: {
        "0": "negative",
        "1": "somewhat negative",
        "2": "neutral",
        "3": "somewhat positive",
        "4": "positive",
    },
}


@dataclass
class CorpusSpec:
    source: Source
    domain: Domain
    paths: dict[str, str] = field(default_factory=dict)
    trial_path: str | None = None

    def __post_init__(self) -> None:
        self.source = Source(self.source)
        self.domain = Domain(self.domain)
        if "train" not in self.paths or "test" not in self.paths:
            raise ValueError("CorpusSpec.paths needs at least 'train' and 'test'")

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusSpec":
        unknown = set(d) - {"source", "domain", "paths", "trial_path"}
        if unknown:
            raise ValueError(f"unknown corpus keys: {sorted(unknown)}")
        return cls(d["source"], d["domain"], dict(d.get("paths") or {}), d.get("trial_path"))

    def to_dict(self) -> dict:
        return {
            "source": self.source.value,
            "domain": self.domain.value,
            "paths": dict(self.paths),
            "trial_path": self.trial_path,
        }


def _parse_xml(path: str | Path) -> ET.Element:
    try:
        return ET.parse(path).getroot()
    except ET.ParseError as exc:
        raise MalformedCorpus(f"{path}: {exc}") from exc
    except OSError as exc:
        raise MalformedCorpus(f"{path}: {exc}") from exc


def _attr(el: ET.Element, name: str, path, sid: str) -> str:
    value = el.get(name)
    if value is None:
        raise SchemaViolation(f"{path}: <{el.tag}> in sentence {sid!r} lacks '{name}'")
    return value


def _polarity(value: str, path, sid: str) -> Polarity:
    try:
        return polarity_parse(value, ABSA_LABELS)
    except UnknownLabel as exc:
        raise SchemaViolation(f"{path}: sentence {sid!r}: {exc}") from exc


def _check_offsets(text: str, term: str, el: ET.Element, path, sid: str) -> None:
    start, end = el.get("from"), el.get("to")
    if start is None or end is None:
        return
    try:
        found = text[int(start) : int(end)]
    except ValueError:
        log.warning("%s: sentence %s: non-integer offsets %r-%r", path, sid, start, end)
        return
    if found != term:
        log.warning("%s: sentence %s: term %r not at %s:%s (found %r)", path, sid, term, start, end, found)


def _no_markers(value: str, path, sid: str) -> str:
    if "<|" in value or "|>" in value:
        raise SchemaViolation(f"{path}: sentence {sid!r}: {value!r} contains an identifier marker")
    return value


def _sentence_text(sent: ET.Element, path, sid: str) -> str:
    node = sent.find("text")
    if node is None or node.text is None or not node.text.strip():
        raise SchemaViolation(f"{path}: sentence {sid!r} has no <text>")
    return _no_markers(node.text, path, sid)


def _read_semeval14(path: str | Path, domain: Domain, split: Split) -> Dataset:
    root = _parse_xml(path)
    examples = []
    for sent in root.iter("sentence"):
        sid = _attr(sent, "id", path, "?")
        text = _sentence_text(sent, path, sid)
        terms = []
        for at in sent.iter("aspectTerm"):
            term = _no_markers(_attr(at, "term", path, sid), path, sid)
            _check_offsets(text, term, at, path, sid)
            terms.append(TermPair(term, _polarity(_attr(at, "polarity", path, sid), path, sid)))
        cats = []
        for ac in sent.iter("aspectCategory"):
            entity, _ = split_official_category(_attr(ac, "category", path, sid), Source.SEMEVAL14, domain.value)
            cats.append(CategoryPair(render_category(entity), _polarity(_attr(ac, "polarity", path, sid), path, sid)))
        examples.append(Example(sid, text, tuple(terms), tuple(cats), None, domain, Source.SEMEVAL14))
    return Dataset(f"semeval14-{domain.value}", tuple(examples), split)


def _read_semeval16(path: str | Path, domain: Domain, split: Split) -> Dataset:
    root = _parse_xml(path)
    examples = []
    for sent in root.iter("sentence"):
        sid = _attr(sent, "id", path, "?")
        text = _sentence_text(sent, path, sid)
        terms: list[TermPair] = []
        seen_terms: set[tuple] = set()
        cats: list[CategoryPair] = []
        seen_cats: set[tuple] = set()
        for op in sent.iter("Opinion"):
            entity, attribute = split_official_category(_attr(op, "category", path, sid), Source.SEMEVAL16, domain.value)
            pol = _polarity(_attr(op, "polarity", path, sid), path, sid)
            cat_key = (entity, attribute, pol.label)
            if cat_key not in seen_cats:
                seen_cats.add(cat_key)
                cats.append(CategoryPair(render_category(entity, attribute), pol))
            target = op.get("target")
            if target is None or target == "NULL":
                continue
            _no_markers(target, path, sid)
            # one opinion target can carry several categories; keep the span once
            term_key = (target, op.get("from"), op.get("to"), pol.label)
            if term_key in seen_terms:
                continue
            seen_terms.add(term_key)
            _check_offsets(text, target, op, path, sid)
            terms.append(TermPair(target, pol))
        examples.append(Example(sid, text, tuple(terms), tuple(cats), None, domain, Source.SEMEVAL16))
    return Dataset(f"semeval16-{domain.value}", tuple(examples), split)


def _xml_splits(spec: CorpusSpec, reader) -> dict[str, Dataset]:
    out = {}
    for split_name, path in spec.paths.items():
        split = Split(split_name)
        out[split.value] = reader(path, spec.domain, split)
    return out


def load_semeval14(spec: CorpusSpec) -> dict[str, Dataset]:
    return _xml_splits(spec, _read_semeval14)


def load_semeval16(spec: CorpusSpec) -> dict[str, Dataset]:
    return _xml_splits(spec, _read_semeval16)


def _read_sst(path: str | Path, source: Source) -> list[tuple[str, str]]:
    numeric = SST_NUMERIC_LABELS.get(source, {})
    records = []
    try:
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                label, sep, sentence = line.partition("\t")
                if not sep or not sentence.strip() or not label.strip():
                    raise MalformedCorpus(f"{path}:{lineno}: expected LABEL<TAB>SENTENCE, got {line!r}")
                label = label.strip()
                records.append((numeric.get(label, label), sentence))
    except OSError as exc:
        raise MalformedCorpus(f"{path}: {exc}") from exc
    return records


def _read_oos(path: str | Path, merge_oos: tuple[str, ...]) -> dict[str, list[tuple[str, str]]]:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise MalformedCorpus(f"{path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise MalformedCorpus(f"{path}: expected a JSON object of split -> records")
    alias = {"train": "train", "val": "dev", "dev": "dev", "test": "test"}
    out: dict[str, list[tuple[str, str]]] = {}
    for key, records in raw.items():
        base = key[4:] if key.startswith("oos_") else key
        split = alias.get(base)
        if split is None:
            continue
        if key.startswith("oos_") and split not in merge_oos:
            continue
        for rec in records:
            if not isinstance(rec, list) or len(rec) != 2:
                raise MalformedCorpus(f"{path}: record {rec!r} in {key!r} is not [utterance, intent]")
            out.setdefault(split, []).append((rec[1], rec[0]))
    return out


def load_labeled_text(
    spec: CorpusSpec,
    merge_oos: tuple[str, ...] = ("train", "dev"),
) -> dict[str, Dataset]:
    """Load SST-2/SST-5 (``label<TAB>sentence`` files) or OOS (one JSON map).

    For OOS every entry of ``spec.paths`` may point at the same JSON file.
    Out-of-scope records (``oos_*`` keys) are folded into the splits named
    in ``merge_oos``; the default reproduces the 15100/3100/4500 split sizes.
    Labels are checked against the set of distinct labels seen in train.
    """
    if spec.source not in (Source.SST2, Source.SST5, Source.OOS):
        raise ValueError(f"load_labeled_text does not read {spec.source.value}")
    per_split: dict[str, list[tuple[str, str]]] = {}
    if spec.source == Source.OOS:
        cache: dict[str, dict] = {}
        for split_name, path in spec.paths.items():
            split = Split(split_name).value
            if path not in cache:
                cache[path] = _read_oos(path, merge_oos)
            per_split[split] = cache[path].get(split, [])
    else:
        for split_name, path in spec.paths.items():
            split = Split(split_name)
            per_split[split.value] = _read_sst(path, spec.source)

    for split, records in per_split.items():
        if not records:
            raise EmptySplit(f"{spec.source.value} split {split!r} is empty")
    train_labels = PolaritySet(tuple(dict.fromkeys(l.strip().lower() for l, _ in per_split["train"])), spec.source.value)

    out = {}
    for split, records in per_split.items():
        examples = []
        for i, (label, sentence) in enumerate(records):
            pol = polarity_parse(label, train_labels)
            examples.append(
                Example(f"{spec.source.value}-{split}-{i}", sentence, (), (), pol, spec.domain, spec.source)
            )
        out[split] = Dataset(spec.source.value, tuple(examples), Split(split))
    return out


def load_corpus(spec: CorpusSpec) -> dict[str, Dataset]:
    """Dispatch on ``spec.source`` and, when a trial file is given, carve out dev."""
    if spec.source == Source.SEMEVAL14:
        splits = load_semeval14(spec)
        reader = _read_semeval14
    elif spec.source == Source.SEMEVAL16:
        splits = load_semeval16(spec)
        reader = _read_semeval16
    else:
        return load_labeled_text(spec)
    if spec.trial_path:
        trial = reader(spec.trial_path, spec.domain, Split.DEV)
        splits["train"], splits["dev"] = split_out_trial(splits["train"], trial)
    return splits


def split_out_trial(train: Dataset, trial: Dataset) -> tuple[Dataset, Dataset]:
    """Remove the official trial examples from train and return them as dev.

    A trial example matches the train example with the same id when the
    sentences also agree; otherwise the first not-yet-matched train example
    with the identical (stripped) sentence, in file order.
    """
    by_id = {ex.id: i for i, ex in enumerate(train.examples)}
    by_sentence: dict[str, list[int]] = {}
    for i, ex in enumerate(train.examples):
        by_sentence.setdefault(ex.sentence.strip(), []).append(i)

    taken: set[int] = set()
    missing = []
    for ex in trial.examples:
        key = ex.sentence.strip()
        i = by_id.get(ex.id)
        if i is None or i in taken or train.examples[i].sentence.strip() != key:
            i = next((j for j in by_sentence.get(key, ()) if j not in taken), None)
        if i is None:
            missing.append(ex.id)
        else:
            taken.add(i)
    if missing:
        raise TrialNotSubset(missing)

    kept = tuple(ex for i, ex in enumerate(train.examples) if i not in taken)
    dev = Dataset(trial.name, trial.examples, Split.DEV)
    return Dataset(train.name, kept, train.split), dev
