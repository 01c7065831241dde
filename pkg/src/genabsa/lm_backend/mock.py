"""A deterministic stand-in model for tests.

The "language model" is a unigram softmax over hashed whitespace tokens
trained by plain gradient descent, so with a fixed batch and a learning rate
of at most 1 its loss never goes up. Generation is table-driven: a scripted
continuation for the exact prompt text if one was given, else the
continuation of the first memorised training sequence that extends the
prompt, else the most frequent label seen in training.
"""

from __future__ import annotations

import json
import re
import zlib
from collections import Counter
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from ..errors import EmptyTrainingSet, PromptTooLong, SequenceTooLong
from ..seqcodec import TaskSequence
from .base import LossTrace, TrainConfig, cut_at_stop

_TOKEN = re.compile(r"\S+")
_PIECE = re.compile(r"\s*\S+")


def _hash(token: str, size: int) -> int:
    return zlib.crc32(token.encode("utf-8")) % size


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _label_token_mask(seq: TaskSequence) -> list[bool]:
    mask = []
    for m in _TOKEN.finditer(seq.text):
        mask.append(any(m.start() < e and s < m.end() for s, e in seq.label_spans))
    return mask


class MockBackend:
    kind = "mock"

    def __init__(
        self,
        vocab_size: int = 512,
        n_layers: int = 2,
        width: int = 8,
        feature_size: int = 256,
        max_positions: int = 1024,
        script: Mapping[str, str] | Callable[[TaskSequence], str | None] | None = None,
        seed: int = 0,
    ):
        self.vocab_size = vocab_size
        self.n_layers = n_layers
        self.width = width
        self.feature_size = feature_size
        self.max_positions = max_positions
        self.script = script
        rng = np.random.default_rng(seed)
        self.embedding = rng.normal(0, 0.1, vocab_size)
        self.blocks = [rng.normal(0, 1, width) for _ in range(n_layers)]
        self._directions = [rng.normal(0, 1, width) for _ in range(n_layers)]
        self.head = np.zeros((1, feature_size + 1))
        self.n_classes = 0
        self.memory: list[tuple[str, str]] = []  # (text, stop_string)
        self.label_counts: Counter[str] = Counter()
        self.last_trace: LossTrace | None = None

    # -- generative -------------------------------------------------------

    def _counts(self, seqs: Sequence[TaskSequence], label_only: bool) -> np.ndarray:
        f = np.zeros(self.vocab_size)
        for seq in seqs:
            toks = _TOKEN.findall(seq.text)
            mask = _label_token_mask(seq) if label_only else [True] * len(toks)
            for tok, keep in zip(toks, mask):
                if keep:
                    f[_hash(tok, self.vocab_size)] += 1
        return f

    def _ce(self, counts: np.ndarray) -> float:
        total = counts.sum()
        if total == 0:
            return float("nan")
        logp = np.log(_softmax(self.embedding))
        return float(-(counts * logp).sum() / total)

    def fit_generative(self, sequences: Sequence[TaskSequence], cfg: TrainConfig, eval_fn=None, snapshots: list | None = None) -> LossTrace:
        seqs = list(sequences)
        if not seqs:
            raise EmptyTrainingSet("no training sequences")
        for s in seqs:
            if s.role != "train":
                raise ValueError(f"sequence for {s.example_id!r} has role {s.role!r}, expected 'train'")
            n = len(_TOKEN.findall(s.text))
            if n > min(cfg.max_seq_len, self.max_positions):
                raise SequenceTooLong(f"{s.example_id}: {n} tokens > {min(cfg.max_seq_len, self.max_positions)}")
        for s in seqs:
            self.memory.append((s.text, s.stop_string))
            for a, b in s.label_spans:
                self.label_counts[s.text[a:b]] += 1

        lr = min(cfg.learning_rate, 1.0)
        rng = np.random.default_rng(cfg.seed)
        order: list[int] = []
        trace = LossTrace("lm")
        steps = cfg.total_steps(len(seqs))
        best = (-np.inf, None)
        if snapshots is not None:
            snapshots.append((0, self.snapshot_layers()))
        for step in range(1, steps + 1):
            if len(order) < cfg.batch_size:
                order.extend(rng.permutation(len(seqs)).tolist())
            batch = [seqs[i] for i in order[: cfg.batch_size]]
            del order[: cfg.batch_size]

            counts = self._counts(batch, label_only=False)
            loss = self._ce(counts)
            probe = self._ce(self._counts(batch, label_only=True)) if cfg.label_position_loss else None
            grad = _softmax(self.embedding) - counts / counts.sum()
            self.embedding = self.embedding - lr * grad
            for j in range(self.n_layers):
                self.blocks[j] = self.blocks[j] + lr * loss * 1e-3 * self._directions[j]
            trace.log(step, loss, probe)

            if eval_fn is not None and cfg.eval_interval and (step % cfg.eval_interval == 0 or step == steps):
                acc = float(eval_fn(self))
                trace.set_dev_accuracy(step, acc)
                if cfg.selection == "best_dev" and acc > best[0]:
                    best = (acc, self._state())
            if snapshots is not None and cfg.snapshot_interval and step % cfg.snapshot_interval == 0:
                snapshots.append((step, self.snapshot_layers()))
        if best[1] is not None:
            self._load_state(best[1])
        self.last_trace = trace
        return trace

    def _fallback(self, prompt: TaskSequence) -> str:
        if prompt.text.rstrip().endswith(("<|endofreview|>", "<|endofuser|>")):
            return " " + prompt.stop_string
        label = self.label_counts.most_common(1)[0][0] if self.label_counts else "positive"
        return f" {label} {prompt.stop_string}"

    def _continuation(self, prompt: TaskSequence) -> str:
        if self.script is not None:
            canned = self.script(prompt) if callable(self.script) else self.script.get(prompt.text)
            if canned is not None:
                return canned
        for text, _stop in self.memory:
            if text.startswith(prompt.text) and len(text) > len(prompt.text) and text[len(prompt.text)] == " ":
                return text[len(prompt.text) :]
        return self._fallback(prompt)

    def generate(self, prompt: TaskSequence, max_new_tokens: int) -> str:
        if prompt.role != "prompt":
            raise ValueError(f"generate needs a prompt, got role {prompt.role!r}")
        if len(_TOKEN.findall(prompt.text)) >= self.max_positions:
            raise PromptTooLong(f"{prompt.example_id}: prompt fills the {self.max_positions}-token context")
        if max_new_tokens <= 0:
            return ""
        text, _ = cut_at_stop(self._continuation(prompt), prompt.stop_string)
        pieces = _PIECE.findall(text)
        return "".join(pieces[:max_new_tokens])

    def generate_batch(self, prompts: Sequence[TaskSequence], max_new_tokens: int) -> list[str]:
        return [self.generate(p, max_new_tokens) for p in prompts]

    # -- classifier ablation --------------------------------------------

    def _features(self, text: str) -> np.ndarray:
        x = np.zeros(self.feature_size + 1)
        for tok in _TOKEN.findall(text):
            x[_hash(tok, self.feature_size)] += 1.0
        norm = np.linalg.norm(x)
        if norm:
            x /= norm
        x[-1] = 1.0
        return x

    def fit_classifier(self, items: Sequence[tuple[str, int]], n_classes: int, cfg: TrainConfig, eval_fn=None, snapshots: list | None = None) -> LossTrace:
        if n_classes < 2:
            raise ValueError("a classifier needs n_classes >= 2")
        items = list(items)
        if not items:
            raise EmptyTrainingSet("no classifier items")
        for _, y in items:
            if not 0 <= y < n_classes:
                raise ValueError(f"class index {y} outside [0, {n_classes})")
        rng = np.random.default_rng(cfg.seed)
        self.n_classes = n_classes
        self.head = rng.normal(0, 0.01, (n_classes, self.feature_size + 1))
        X = np.stack([self._features(t) for t, _ in items])
        Y = np.array([y for _, y in items])
        lr = min(cfg.learning_rate * 10, 10.0)
        trace = LossTrace("classifier")
        steps = cfg.total_steps(len(items))
        if snapshots is not None:
            snapshots.append((0, self.snapshot_layers()))
        order: list[int] = []
        for step in range(1, steps + 1):
            if len(order) < cfg.batch_size:
                order.extend(rng.permutation(len(items)).tolist())
            idx = np.array(order[: cfg.batch_size])
            del order[: cfg.batch_size]
            p = _softmax(X[idx] @ self.head.T)
            loss = float(-np.log(p[np.arange(len(idx)), Y[idx]] + 1e-300).mean())
            p[np.arange(len(idx)), Y[idx]] -= 1.0
            self.head = self.head - lr * (p.T @ X[idx]) / len(idx)
            trace.log(step, loss, loss)
            if eval_fn is not None and cfg.eval_interval and (step % cfg.eval_interval == 0 or step == steps):
                trace.set_dev_accuracy(step, float(eval_fn(self)))
            if snapshots is not None and cfg.snapshot_interval and step % cfg.snapshot_interval == 0:
                snapshots.append((step, self.snapshot_layers()))
        self.last_trace = trace
        return trace

    def predict_class(self, text: str) -> int:
        if self.n_classes < 2:
            raise ValueError("no classifier head attached; call fit_classifier first")
        return int(np.argmax(self.head @ self._features(text)))

    def attach_head(self, n_classes: int, seed: int = 0) -> None:
        if n_classes < 2:
            raise ValueError("a classifier needs n_classes >= 2")
        self.n_classes = n_classes
        self.head = np.random.default_rng(seed).normal(0, 0.01, (n_classes, self.feature_size + 1))

    # -- introspection and persistence ----------------------------------

    def snapshot_layers(self) -> dict[str, np.ndarray]:
        out = {"embedding": self.embedding.copy()}
        for j, b in enumerate(self.blocks):
            out[f"block_{j}"] = b.copy()
        out["head"] = self.head.ravel().copy()
        return out

    def _state(self) -> dict:
        return {"embedding": self.embedding.copy(), "blocks": [b.copy() for b in self.blocks], "head": self.head.copy()}

    def _load_state(self, state: dict) -> None:
        self.embedding = state["embedding"]
        self.blocks = state["blocks"]
        self.head = state["head"]

    def config(self) -> dict:
        return {
            "backend": self.kind,
            "vocab_size": self.vocab_size,
            "n_layers": self.n_layers,
            "width": self.width,
            "feature_size": self.feature_size,
            "max_positions": self.max_positions,
            "n_classes": self.n_classes,
        }

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "config.json").write_text(json.dumps(self.config(), indent=2), encoding="utf-8")
        arrays = {"embedding": self.embedding, "head": self.head}
        arrays.update({f"block_{j}": b for j, b in enumerate(self.blocks)})
        np.savez(d / "weights.npz", **arrays)
        (d / "memory.json").write_text(
            json.dumps({"memory": self.memory, "label_counts": dict(self.label_counts)}), encoding="utf-8"
        )

    @classmethod
    def load(cls, directory: str | Path) -> "MockBackend":
        d = Path(directory)
        cfg = json.loads((d / "config.json").read_text(encoding="utf-8"))
        m = cls(cfg["vocab_size"], cfg["n_layers"], cfg["width"], cfg["feature_size"], cfg["max_positions"])
        with np.load(d / "weights.npz") as w:
            m.embedding = w["embedding"]
            m.head = w["head"]
            m.blocks = [w[f"block_{j}"] for j in range(m.n_layers)]
        m.n_classes = cfg.get("n_classes", 0)
        mem = json.loads((d / "memory.json").read_text(encoding="utf-8"))
        m.memory = [tuple(x) for x in mem["memory"]]
        m.label_counts = Counter(mem["label_counts"])
        return m
