"""Training configuration, loss traces, and helpers shared by every backend."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterator

from ..errors import EmptyTrainingSet


@dataclass
class TrainConfig:
    """Optimisation settings. ``max_steps`` wins over ``epochs`` when both are set.

    None of these values come from published experiments; they are defaults.
    """

    epochs: int | None = None
    max_steps: int | None = 100
    batch_size: int = 8
    learning_rate: float = 5e-5
    max_seq_len: int = 256
    eval_interval: int = 0
    lm_loss: bool = True
    label_position_loss: bool = False
    seed: int = 0
    weight_decay: float = 0.0
    warmup_steps: int = 0
    snapshot_interval: int = 0
    selection: str = "final"  # "final" | "best_dev"

    def __post_init__(self) -> None:
        if self.epochs is None and self.max_steps is None:
            raise ValueError("set epochs or max_steps")
        for name in ("epochs", "max_steps"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("batch_size", "max_seq_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if min(self.eval_interval, self.snapshot_interval, self.warmup_steps) < 0:
            raise ValueError("intervals must be >= 0")
        if self.selection not in ("final", "best_dev"):
            raise ValueError(f"unknown selection rule {self.selection!r}")

    def total_steps(self, n_items: int) -> int:
        if n_items <= 0:
            raise EmptyTrainingSet("no training items")
        if self.max_steps is not None:
            return self.max_steps
        return self.epochs * math.ceil(n_items / self.batch_size)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class LossRecord:
    step: int
    lm_loss: float
    label_position_loss: float | None = None
    dev_accuracy: float | None = None

    def as_row(self) -> dict:
        return {
            "step": self.step,
            "lm_loss": self.lm_loss,
            "label_position_loss": self.label_position_loss,
            "dev_accuracy": self.dev_accuracy,
        }


class LossTrace:
    """Per-step loss records with strictly increasing steps.

    ``objective`` names what ``lm_loss`` measures: next-token cross-entropy
    for generative training, class cross-entropy for the classifier ablation.
    """

    COLUMNS = ("step", "lm_loss", "label_position_loss", "dev_accuracy")

    def __init__(self, objective: str = "lm"):
        self.objective = objective
        self.records: list[LossRecord] = []

    def append(self, record: LossRecord) -> None:
        if self.records and record.step <= self.records[-1].step:
            raise ValueError(f"step {record.step} does not follow step {self.records[-1].step}")
        self.records.append(record)

    def log(self, step: int, lm_loss: float, label_position_loss: float | None = None, dev_accuracy: float | None = None) -> None:
        self.append(LossRecord(step, float(lm_loss), label_position_loss, dev_accuracy))

    def set_dev_accuracy(self, step: int, value: float) -> None:
        for i in range(len(self.records) - 1, -1, -1):
            if self.records[i].step == step:
                r = self.records[i]
                self.records[i] = LossRecord(r.step, r.lm_loss, r.label_position_loss, value)
                return
        raise KeyError(step)

    def __iter__(self) -> Iterator[LossRecord]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, LossTrace) and self.records == other.records and self.objective == other.objective

    @property
    def lm_losses(self) -> list[float]:
        return [r.lm_loss for r in self.records]

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(self.COLUMNS)
            for r in self.records:
                w.writerow(["" if v is None else v for v in r.as_row().values()])

    @classmethod
    def from_csv(cls, path: str | Path, objective: str = "lm") -> "LossTrace":
        trace = cls(objective)
        with Path(path).open(encoding="utf-8") as f:
            for row in csv.DictReader(f):
                opt = lambda k: float(row[k]) if row.get(k) not in (None, "") else None  # noqa: E731
                trace.append(LossRecord(int(row["step"]), float(row["lm_loss"]), opt("label_position_loss"), opt("dev_accuracy")))
        return trace


def cut_at_stop(text: str, stop: str | None) -> tuple[str, bool]:
    """Truncate ``text`` just after the first ``stop``; report whether it was found."""
    if stop:
        i = text.find(stop)
        if i >= 0:
            return text[: i + len(stop)], True
    return text, False
