"""Seeded random generators of examples and predictions for property tests."""

from __future__ import annotations

import random

from genabsa.core_types import (
    CategoryPair,
    Domain,
    Example,
    Polarity,
    PolaritySet,
    PredictionRecord,
    Source,
    TaskMode,
    TermPair,
)

# multi-word labels share words with single-word ones on purpose
FUZZ_LABELS = PolaritySet(
    ("positive", "negative", "neutral", "conflict", "somewhat positive", "somewhat negative", "very very negative"),
    "fuzz",
)
_LABEL_WORDS = {w for l in FUZZ_LABELS.labels for w in l.split()}
# a term may not end in a word that can start a longer label ("somewhat", "very")
_LEADING_LABEL_WORDS = {l.split()[0] for l in FUZZ_LABELS.labels if " " in l} | {
    w for l in FUZZ_LABELS.labels for w in l.split()[:-1]
}
_ALPHABET = "abcdefghijklmnopqrstuvwxyzéü0123456789-'&$."
_SENT_WORDS = ["the", "food", "was", "great", "but", "service", "slow", "and", "price", "ok", ",", "!", "?"]


def _word(rng: random.Random) -> str:
    if rng.random() < 0.15:
        return rng.choice(sorted(_LABEL_WORDS))
    n = rng.randint(1, 8)
    w = "".join(rng.choice(_ALPHABET) for _ in range(n))
    if rng.random() < 0.1:
        w = w.upper()
    if rng.random() < 0.05:
        w = w + ","  # glued comma, not a pair separator
    return w


def fuzz_item(rng: random.Random) -> str:
    while True:
        words = [_word(rng) for _ in range(rng.randint(1, 4))]
        if words[-1].lower() not in _LEADING_LABEL_WORDS:
            return " ".join(words)


def fuzz_label(rng: random.Random, labels: PolaritySet = FUZZ_LABELS) -> Polarity:
    return Polarity(rng.choice(labels.labels))


def fuzz_sentence(rng: random.Random) -> str:
    return " ".join(rng.choice(_SENT_WORDS) for _ in range(rng.randint(1, 12))) + rng.choice(["", ".", " ."])


def fuzz_example(rng: random.Random, i: int, max_pairs: int = 5, sentence_label: bool = False) -> Example:
    if sentence_label:
        return Example(f"s{i}", fuzz_sentence(rng), (), (), fuzz_label(rng), Domain.MOVIE, Source.SST5)
    terms = tuple(TermPair(fuzz_item(rng), fuzz_label(rng)) for _ in range(rng.randint(0, max_pairs)))
    cats = tuple(CategoryPair(fuzz_item(rng), fuzz_label(rng)) for _ in range(rng.randint(0, max_pairs)))
    if terms and rng.random() < 0.1:
        terms = terms + (terms[0],)  # duplicate pair
    return Example(f"e{i}", fuzz_sentence(rng), terms, cats, None, Domain.RESTAURANT, Source.SEMEVAL14)


def fuzz_predictions(rng: random.Random, examples: list[Example], mode: TaskMode, labels: PolaritySet) -> list[PredictionRecord]:
    """Predictions that sometimes copy gold, sometimes perturb it, sometimes go missing."""
    mode = TaskMode(mode)
    small = [l for l in labels.labels]
    out: list[PredictionRecord] = []

    def perturb(pairs):
        pairs = [tuple(p) for p in pairs]
        res = []
        for t, l in pairs:
            r = rng.random()
            if r < 0.6:
                res.append((t, l))
            elif r < 0.75:
                res.append((t, rng.choice(small)))
            elif r < 0.85:
                res.append((rng.choice(["x", "y", t + " z"]), l))
            # else dropped
        for _ in range(rng.choice([0, 0, 0, 1, 2])):
            res.append((rng.choice(["x", "y", "food"]), rng.choice(small)))
        if len(res) > 1 and rng.random() < 0.2:
            res.append(res[0])
        rng.shuffle(res)
        return tuple(res)

    for ex in examples:
        if mode.is_single:
            items = ex.terms if mode == TaskMode.SINGLE_TERM else ex.categories
            for p in items:
                target = p.term if mode == TaskMode.SINGLE_TERM else p.category
                label = p.polarity.label if rng.random() < 0.6 else rng.choice(small + [None])
                out.append(PredictionRecord(ex.id, mode, label=label, target=target))
            continue
        if mode == TaskMode.SENTENCE_LABEL:
            label = ex.sentence_label.label if rng.random() < 0.6 else rng.choice(small + [None])
            out.append(PredictionRecord(ex.id, mode, label=label))
            continue
        if rng.random() < 0.1:
            continue  # missing record
        gt = [(p.term.lower(), p.polarity.label) for p in ex.terms]
        gc = [(p.category.lower(), p.polarity.label) for p in ex.categories]
        if mode == TaskMode.JOINT_TERM:
            out.append(PredictionRecord(ex.id, mode, pairs=perturb(gt)))
        elif mode == TaskMode.JOINT_CATEGORY:
            out.append(PredictionRecord(ex.id, mode, pairs=perturb(gc)))
        else:
            out.append(PredictionRecord(ex.id, mode, pairs=perturb(gt), categories=perturb(gc)))
    rng.shuffle(out)
    return out


def simple_example(rng: random.Random, i: int, sentence_label: bool = False) -> Example:
    """Example with short plain items, for metric tests where text does not matter."""
    if sentence_label:
        return Example(f"s{i}", "a sentence", (), (), Polarity(rng.choice(["positive", "negative", "neutral"])), Domain.MOVIE, Source.SST5)
    vocab = ["food", "service", "x", "y", "wine list", "decor"]
    labels = ["positive", "negative", "neutral", "conflict"]
    terms = tuple(TermPair(rng.choice(vocab), Polarity(rng.choice(labels))) for _ in range(rng.randint(0, 4)))
    cats = tuple(CategoryPair(rng.choice(vocab), Polarity(rng.choice(labels))) for _ in range(rng.randint(0, 4)))
    return Example(f"e{i}", "a sentence", terms, cats, None, Domain.RESTAURANT, Source.SEMEVAL14)
