"""Scoring: polarity accuracy, extraction F1, joint accuracy, seed aggregation.

All comparisons are made on normalized strings. Category scoring compares
rendered category text (``food quality``), not official ``FOOD#QUALITY`` names.
"""

from __future__ import annotations

import csv
import json
import statistics
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .core_types import Dataset, Example, PredictionRecord, TaskMode, normalize_text
from .errors import EmptyInput, MissingPrediction

STD_DEFINITION = "population (divisor n)"
F1_MATCHING = "exact normalized-string match, per-example deduplicated sets, micro-averaged"
EMPTY_F1_CONVENTION = "F1 = 1.0 when neither predictions nor gold contain any item"


def _gold_pairs(ex: Example, segment: str) -> list[tuple[str, str]]:
    if segment == "term":
        return [(normalize_text(p.term), normalize_text(p.polarity.label)) for p in ex.terms]
    return [(normalize_text(p.category), normalize_text(p.polarity.label)) for p in ex.categories]


def _pred_pairs(rec: PredictionRecord | None, segment: str) -> list[tuple[str, str]]:
    if rec is None:
        return []
    src = rec.categories if (rec.mode == TaskMode.MULTI and segment == "category") else rec.pairs
    return [(normalize_text(t), normalize_text(l)) for t, l in src]


def _segment_for(mode: TaskMode, segment: str | None) -> str:
    if segment is not None:
        return segment
    if mode in (TaskMode.SINGLE_CATEGORY, TaskMode.JOINT_CATEGORY):
        return "category"
    if mode == TaskMode.MULTI:
        raise ValueError("multi mode needs an explicit segment ('term' or 'category')")
    return "term"


def _by_example(preds: Iterable[PredictionRecord]) -> dict[str, PredictionRecord]:
    out: dict[str, PredictionRecord] = {}
    for r in preds:
        out.setdefault(r.example_id, r)
    return out


def polarity_accuracy(
    preds: Sequence[PredictionRecord],
    gold: Dataset | Iterable[Example],
    mode: TaskMode,
    segment: str | None = None,
) -> float:
    """Fraction of gold targets whose polarity is predicted correctly.

    Single-task and sentence modes need one prediction per gold target and
    raise MissingPrediction otherwise. In joint and multi modes a gold pair
    counts as correct when the example's generated pairs contain the same
    term (or category) with the same polarity; absent records count as empty
    generations.
    """
    mode = TaskMode(mode)
    examples = list(gold)
    if mode == TaskMode.SENTENCE_LABEL:
        by_id = _by_example(preds)
        if not examples:
            return 0.0
        correct = 0
        for ex in examples:
            rec = by_id.get(ex.id)
            if rec is None:
                raise MissingPrediction(f"no prediction for example {ex.id!r}")
            if rec.label is not None and normalize_text(rec.label) == normalize_text(ex.sentence_label.label):
                correct += 1
        return correct / len(examples)

    seg = _segment_for(mode, segment)
    total = 0
    correct = 0
    if mode.is_single:
        queued: dict[tuple[str, str], list[PredictionRecord]] = defaultdict(list)
        for r in preds:
            queued[(r.example_id, normalize_text(r.target or ""))].append(r)
        for ex in examples:
            for target, label in _gold_pairs(ex, seg):
                total += 1
                bucket = queued.get((ex.id, target))
                if not bucket:
                    raise MissingPrediction(f"no prediction for target {target!r} of example {ex.id!r}")
                rec = bucket.pop(0)
                if rec.label is not None and normalize_text(rec.label) == label:
                    correct += 1
        return correct / total if total else 0.0

    by_id = _by_example(preds)
    for ex in examples:
        available = Counter(_pred_pairs(by_id.get(ex.id), seg))
        for pair in _gold_pairs(ex, seg):
            total += 1
            if available[pair] > 0:
                available[pair] -= 1
                correct += 1
    return correct / total if total else 0.0


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float
    tp: int
    n_pred: int
    n_gold: int


def extraction_prf(
    preds: Sequence[PredictionRecord],
    gold: Dataset | Iterable[Example],
    segment: str = "term",
) -> PRF:
    by_id = _by_example(preds)
    tp = n_pred = n_gold = 0
    for ex in gold:
        p = {t for t, _ in _pred_pairs(by_id.get(ex.id), segment)}
        g = {t for t, _ in _gold_pairs(ex, segment)}
        tp += len(p & g)
        n_pred += len(p)
        n_gold += len(g)
    if n_pred == 0 and n_gold == 0:
        return PRF(1.0, 1.0, 1.0, 0, 0, 0)
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gold if n_gold else 0.0
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return PRF(precision, recall, f1, tp, n_pred, n_gold)


def extraction_f1(preds: Sequence[PredictionRecord], gold: Dataset | Iterable[Example], segment: str = "term") -> float:
    """Micro F1 of extracted terms (or categories); polarity is ignored."""
    return extraction_prf(preds, gold, segment).f1


def joint_accuracy(preds: Sequence[PredictionRecord], gold: Dataset | Iterable[Example], mode: TaskMode) -> float:
    """Fraction of examples whose predicted pair multiset equals gold exactly."""
    mode = TaskMode(mode)
    if mode == TaskMode.MULTI:
        segments = ["term", "category"]
    else:
        segments = [_segment_for(mode, None)]
    by_id = _by_example(preds)
    examples = list(gold)
    if not examples:
        return 0.0
    correct = 0
    for ex in examples:
        rec = by_id.get(ex.id)
        if all(Counter(_pred_pairs(rec, s)) == Counter(_gold_pairs(ex, s)) for s in segments):
            correct += 1
    return correct / len(examples)


def aggregate(seed_values: Sequence[float]) -> dict[str, float]:
    """Mean and population standard deviation across seeds."""
    values = list(seed_values)
    if not values:
        raise EmptyInput("aggregate needs at least one value")
    return {"mean": statistics.fmean(values), "std": statistics.pstdev(values)}


def format_mean_std(mean: float, std: float, percent: bool = True) -> str:
    scale = 100.0 if percent else 1.0
    return f"{mean * scale:.2f} ± {std * scale:.2f}"


def metric_names(mode: TaskMode) -> list[str]:
    mode = TaskMode(mode)
    return {
        TaskMode.SINGLE_TERM: ["sb2_acc"],
        TaskMode.SINGLE_CATEGORY: ["sb4_acc"],
        TaskMode.SENTENCE_LABEL: ["accuracy"],
        TaskMode.JOINT_TERM: ["joint_accuracy", "sb1_f1", "sb2_acc"],
        TaskMode.JOINT_CATEGORY: ["joint_accuracy", "sb3_f1", "sb4_acc"],
        TaskMode.MULTI: ["joint_accuracy", "sb1_f1", "sb2_acc", "sb3_f1", "sb4_acc"],
    }[mode]


def score(preds: Sequence[PredictionRecord], gold: Dataset | Iterable[Example], mode: TaskMode) -> dict[str, float]:
    """Every metric that applies to ``mode``, keyed by :func:`metric_names`."""
    mode = TaskMode(mode)
    examples = list(gold)
    out: dict[str, float] = {}
    for name in metric_names(mode):
        if name == "joint_accuracy":
            out[name] = joint_accuracy(preds, examples, mode)
        elif name == "sb1_f1":
            out[name] = extraction_f1(preds, examples, "term")
        elif name == "sb3_f1":
            out[name] = extraction_f1(preds, examples, "category")
        elif name == "sb2_acc":
            out[name] = polarity_accuracy(preds, examples, mode, "term")
        elif name == "sb4_acc":
            out[name] = polarity_accuracy(preds, examples, mode, "category")
        else:
            out[name] = polarity_accuracy(preds, examples, mode)
    return out


def prediction_counts(preds: Sequence[PredictionRecord], gold: Dataset | Iterable[Example], mode: TaskMode) -> dict[str, int]:
    """Example/prediction/diagnostic counts. In joint modes a missing record is a parse failure."""
    mode = TaskMode(mode)
    examples = list(gold)
    present = {r.example_id for r in preds}
    missing = 0 if not mode.is_joint else sum(1 for ex in examples if ex.id not in present)
    return {
        "examples": len(examples),
        "predictions": len(preds),
        "parse_failures": sum(len(r.parse_failures) for r in preds) + missing,
        "truncated": sum(1 for r in preds if r.truncated),
        "missing": missing,
    }


@dataclass
class RunReport:
    """Metrics of one configuration (one shot level) over one or more seeds."""

    name: str
    mode: TaskMode
    per_seed: dict[str, dict[str, float]]
    counts: dict[str, int] = field(default_factory=dict)
    shot: str = ""
    meta: dict = field(default_factory=dict)
    std_definition: str = STD_DEFINITION

    def __post_init__(self) -> None:
        self.mode = TaskMode(self.mode)
        self.per_seed = {str(k): dict(v) for k, v in self.per_seed.items()}

    @property
    def seeds(self) -> list[str]:
        return list(self.per_seed)

    @property
    def metrics(self) -> list[str]:
        names: dict[str, None] = {}
        for values in self.per_seed.values():
            names.update(dict.fromkeys(values))
        return list(names)

    @property
    def aggregate(self) -> dict[str, dict[str, float]]:
        return {m: aggregate([v[m] for v in self.per_seed.values() if m in v]) for m in self.metrics}

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "mode": self.mode.value,
            "shot": self.shot,
            "seeds": self.seeds,
            "per_seed": self.per_seed,
            "aggregate": self.aggregate,
            "counts": self.counts,
            "std_definition": self.std_definition,
            "f1_matching": F1_MATCHING,
            "empty_f1_convention": EMPTY_F1_CONVENTION,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        return cls(
            name=d["name"],
            mode=TaskMode(d["mode"]),
            per_seed=d["per_seed"],
            counts=d.get("counts") or {},
            shot=d.get("shot", ""),
            meta=d.get("meta") or {},
            std_definition=d.get("std_definition", STD_DEFINITION),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, ensure_ascii=False), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "RunReport":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["seed", *self.metrics])
            for seed, values in self.per_seed.items():
                w.writerow([seed, *(values.get(m, "") for m in self.metrics)])
            agg = self.aggregate
            w.writerow(["mean", *(agg[m]["mean"] for m in self.metrics)])
            w.writerow(["std", *(agg[m]["std"] for m in self.metrics)])
