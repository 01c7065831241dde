"""Backend contract: fine-tune, generate, classify, snapshot.

Backends are plain objects exposing ``fit_generative``, ``generate``,
``generate_batch``, ``fit_classifier``, ``predict_class``,
``snapshot_layers``, ``save`` and a ``load`` classmethod. The functions
below are the stable entry points the harness calls.
"""

from __future__ import annotations

import json
import os
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from ..seqcodec import TaskSequence
from .base import LossRecord, LossTrace, TrainConfig, cut_at_stop
from .mock import MockBackend

__all__ = [
    "LossRecord",
    "LossTrace",
    "MockBackend",
    "TrainConfig",
    "cut_at_stop",
    "fit_classifier",
    "fit_generative",
    "generate",
    "get_backend",
    "load_backend",
    "predict_class",
    "save_checkpoint",
    "snapshot_layers",
]

LOSS_AVERAGING = "per token, over all non-padding positions of the batch"
DECODING = "greedy; stop at stop string, end-of-text token or token budget"


def fit_generative(model, sequences: Sequence[TaskSequence], cfg: TrainConfig, *, eval_fn=None, snapshots: list | None = None):
    """Fine-tune ``model`` on training sequences; returns ``(model, LossTrace)``.

    ``eval_fn(model) -> float`` is called every ``cfg.eval_interval`` steps
    and its value lands in the trace's ``dev_accuracy`` column. When
    ``snapshots`` is a list, ``(step, snapshot_layers(model))`` tuples are
    appended at step 0 and every ``cfg.snapshot_interval`` steps.
    """
    trace = model.fit_generative(sequences, cfg, eval_fn=eval_fn, snapshots=snapshots)
    return model, trace


def generate(model, prompt: TaskSequence, max_new_tokens: int) -> str:
    """Greedy continuation of ``prompt`` (prompt text excluded)."""
    return model.generate(prompt, max_new_tokens)


def fit_classifier(model, items: Sequence[tuple[str, int]], n_classes: int, cfg: TrainConfig, *, eval_fn=None, snapshots: list | None = None):
    """Attach a fresh linear head of width ``n_classes`` and train it with the backbone.

    Returns the model; the loss trace is kept on ``model.last_trace``.
    """
    if n_classes < 2:
        raise ValueError("a classifier needs n_classes >= 2")
    model.fit_classifier(items, n_classes, cfg, eval_fn=eval_fn, snapshots=snapshots)
    return model


def predict_class(model, text: str) -> int:
    return model.predict_class(text)


def snapshot_layers(model) -> dict[str, np.ndarray]:
    return model.snapshot_layers()


def get_backend(spec: str = "mock", **kwargs):
    """Build a backend from an id: ``mock`` or ``hf:<model name or path>``."""
    if spec == "mock":
        return MockBackend(**kwargs)
    if spec.startswith("hf:"):
        from .hf import TransformersBackend

        return TransformersBackend.from_pretrained(spec[3:], cache_dir=kwargs.pop("cache_dir", None), **kwargs)
    raise ValueError(f"unknown backend {spec!r}; expected 'mock' or 'hf:<name>'")


def save_checkpoint(model, directory: str | Path, manifest: dict | None = None) -> Path:
    """Write ``config.json``, the weights and ``manifest.json`` into ``directory``."""
    d = Path(directory)
    model.save(d)
    info = {
        "backend": model.kind,
        "loss_averaging": LOSS_AVERAGING,
        "decoding": DECODING,
        "saved_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
        **(manifest or {}),
    }
    (d / "manifest.json").write_text(json.dumps(info, indent=2, default=str), encoding="utf-8")
    return d


def load_backend(directory: str | Path):
    d = Path(directory)
    kind = json.loads((d / "config.json").read_text(encoding="utf-8"))["backend"]
    if kind == "mock":
        return MockBackend.load(d)
    if kind == "hf":
        from .hf import TransformersBackend

        return TransformersBackend.load(d)
    raise ValueError(f"{d}: unknown backend kind {kind!r}")


def default_jobs() -> int:
    """Worker processes for sweeps; ``GENABSA_JOBS`` overrides the default of 1."""
    try:
        return max(1, int(os.environ.get("GENABSA_JOBS", "1")))
    except ValueError:
        return 1
