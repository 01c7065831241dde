"""Seeded few-shot subsets of a training set.

Randomness comes from numpy's PCG64 bit generator seeded through
``SeedSequence([seed, level_tag])``. Only ``Generator.random`` (uniform
doubles) is consumed, and sampling without replacement is done by sorting
random keys, so subsets do not depend on numpy's higher-level sampling
algorithms and are identical across platforms. ``level_tag`` mixes in the
shot mode and value: each shot level is an independent draw, so the 1% subset
of a seed is not in general contained in its 5% subset.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .core_types import Dataset, Example
from .errors import EmptyTrain, NoClasses

RNG_ALGORITHM = "numpy PCG64 via SeedSequence([seed, crc32(mode:value)]); random-key selection"


@dataclass(frozen=True)
class ShotSpec:
    mode: str  # "fraction" | "per_class"
    value: float
    seed: int = 0

    def __post_init__(self) -> None:
        mode = self.mode.replace("-", "_")
        object.__setattr__(self, "mode", mode)
        if mode == "fraction":
            if not 0 < self.value <= 1:
                raise ValueError(f"fraction must be in (0, 1], got {self.value}")
        elif mode == "per_class":
            if int(self.value) != self.value or self.value < 1:
                raise ValueError(f"per-class k must be an integer >= 1, got {self.value}")
            object.__setattr__(self, "value", int(self.value))
        else:
            raise ValueError(f"unknown shot mode {self.mode!r}")

    @property
    def label(self) -> str:
        """Display label: ``1%`` / ``100%`` for fractions, ``5-shot`` per class."""
        if self.mode == "fraction":
            pct = self.value * 100
            return f"{pct:g}%"
        return f"{self.value}-shot"


def _rng(spec: ShotSpec) -> np.random.Generator:
    tag = zlib.crc32(f"{spec.mode}:{spec.value!r}".encode())
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.seed, tag])))


def _pick(rng: np.random.Generator, n: int, k: int) -> list[int]:
    """k distinct indices out of range(n), uniformly, via sorted random keys."""
    keys = rng.random(n)
    return sorted(np.argsort(keys, kind="stable")[:k].tolist())


def fraction_size(n: int, value: float) -> int:
    # the epsilon keeps e.g. 0.29 * 100 from flooring to 28
    return max(1, math.floor(value * n + 1e-9))


def sample_fraction(train: Dataset, spec: ShotSpec) -> Dataset:
    if spec.mode != "fraction":
        raise ValueError("sample_fraction needs a fraction ShotSpec")
    n = len(train)
    if n == 0:
        raise EmptyTrain(f"{train.name} has no examples")
    k = fraction_size(n, spec.value)
    if k >= n:
        return train
    chosen = _pick(_rng(spec), n, k)
    return Dataset(train.name, tuple(train.examples[i] for i in chosen), train.split)


def sample_per_class(
    train: Dataset,
    spec: ShotSpec,
    class_of: Callable[[Example], Iterable[str]],
) -> Dataset:
    """Pick up to k examples per class key; an example serves only one class.

    Classes are visited in a seeded random order and each takes its examples
    from those not already chosen, so the result has at most
    ``k * number_of_classes`` examples.
    """
    if spec.mode != "per_class":
        raise ValueError("sample_per_class needs a per_class ShotSpec")
    if len(train) == 0:
        raise EmptyTrain(f"{train.name} has no examples")
    members: dict[str, list[int]] = {}
    for i, ex in enumerate(train.examples):
        for key in dict.fromkeys(class_of(ex)):
            members.setdefault(key, []).append(i)
    if not members:
        raise NoClasses(f"no example of {train.name} has a class key")

    rng = _rng(spec)
    classes = sorted(members)
    order = [classes[i] for i in np.argsort(rng.random(len(classes)), kind="stable")]
    taken: set[int] = set()
    for key in order:
        pool = [i for i in members[key] if i not in taken]
        picks = _pick(rng, len(pool), min(spec.value, len(pool)))
        taken.update(pool[j] for j in picks)
    return Dataset(train.name, tuple(ex for i, ex in enumerate(train.examples) if i in taken), train.split)


def class_keys_for(mode: str) -> Callable[[Example], list[str]]:
    """Default class_of for per-class sampling: category names or sentence labels."""
    if mode in ("single_category", "joint_category", "multi"):
        return lambda ex: [p.category for p in ex.categories]
    if mode == "sentence_label":
        return lambda ex: [ex.sentence_label.label] if ex.sentence_label else []
    return lambda ex: [p.polarity.label for p in ex.terms]


def sample(train: Dataset, spec: ShotSpec, class_of: Callable[[Example], Iterable[str]] | None = None) -> Dataset:
    if spec.mode == "fraction":
        return sample_fraction(train, spec)
    if class_of is None:
        raise ValueError("per-class sampling needs class_of")
    return sample_per_class(train, spec, class_of)
