"""Causal LM backend on top of ``transformers`` (GPT-2 family and alike).

Identifiers go through the ordinary tokenizer; the vocabulary is never
extended. Training minimises mean next-token cross-entropy over every
non-padding position of every sequence in the batch (per-token averaging).
"""

from __future__ import annotations

import copy
import json
import logging
import os
import re
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from ..errors import EmptyTrainingSet, PromptTooLong, SequenceTooLong
from ..seqcodec import TaskSequence
from .base import LossTrace, TrainConfig, cut_at_stop

log = logging.getLogger(__name__)

_BLOCK = re.compile(r"^(?:.*\.)?(?:h|layers|layer|blocks)\.(\d+)\.")


def _seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed % (2**32))


class TransformersBackend:
    kind = "hf"

    def __init__(self, model, tokenizer, name: str = ""):
        self.model = model
        self.tokenizer = tokenizer
        self.name = name
        if tokenizer.pad_token is None:
            tokenizer.pad_token = tokenizer.eos_token
        self.head: nn.Linear | None = None
        self.n_classes = 0
        self.last_trace: LossTrace | None = None
        self.device = torch.device("cpu")

    @classmethod
    def from_pretrained(cls, name: str, cache_dir: str | None = None, device: str | None = None) -> "TransformersBackend":
        from transformers import AutoModelForCausalLM, AutoTokenizer

        cache_dir = cache_dir or os.environ.get("GENABSA_CACHE_DIR")
        tok = AutoTokenizer.from_pretrained(name, cache_dir=cache_dir)
        model = AutoModelForCausalLM.from_pretrained(name, cache_dir=cache_dir)
        b = cls(model, tok, name)
        b.to(device or ("cuda" if torch.cuda.is_available() else "cpu"))
        return b

    def to(self, device: str | torch.device) -> "TransformersBackend":
        self.device = torch.device(device)
        self.model.to(self.device)
        if self.head is not None:
            self.head.to(self.device)
        return self

    @property
    def context_size(self) -> int:
        cfg = self.model.config
        return int(getattr(cfg, "n_positions", None) or getattr(cfg, "max_position_embeddings", 1024))

    # -- tokenisation -----------------------------------------------------

    def _encode_train(self, seqs: Sequence[TaskSequence], cfg: TrainConfig, with_probe: bool) -> list[tuple[list[int], list[bool]]]:
        limit = min(cfg.max_seq_len, self.context_size)
        eos = self.tokenizer.eos_token_id
        out = []
        for s in seqs:
            enc = self.tokenizer(s.text, return_offsets_mapping=with_probe, add_special_tokens=False)
            ids = list(enc["input_ids"]) + [eos]
            if len(ids) > limit:
                raise SequenceTooLong(f"{s.example_id}: {len(ids)} tokens > max_seq_len {limit}")
            mask = [False] * len(ids)
            if with_probe:
                for i, (a, b) in enumerate(enc["offset_mapping"]):
                    mask[i] = any(a < e and s_ < b for s_, e in s.label_spans)
            out.append((ids, mask))
        return out

    def _pad(self, rows: list[list[int]], masks: list[list[bool]] | None = None):
        width = max(len(r) for r in rows)
        pad = self.tokenizer.pad_token_id
        ids = torch.full((len(rows), width), pad, dtype=torch.long)
        att = torch.zeros((len(rows), width), dtype=torch.long)
        probe = torch.zeros((len(rows), width), dtype=torch.bool)
        for i, r in enumerate(rows):
            ids[i, : len(r)] = torch.tensor(r)
            att[i, : len(r)] = 1
            if masks is not None:
                probe[i, : len(r)] = torch.tensor(masks[i])
        return ids.to(self.device), att.to(self.device), probe.to(self.device)

    # -- shared loop --------------------------------------------------------

    def _optimizer(self, params, cfg: TrainConfig, steps: int):
        opt = torch.optim.AdamW(params, lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
        warm = cfg.warmup_steps

        def schedule(step: int) -> float:
            if warm and step < warm:
                return (step + 1) / warm
            return max(0.0, (steps - step) / max(1, steps - warm))

        return opt, torch.optim.lr_scheduler.LambdaLR(opt, schedule)

    def _train(self, n_items: int, cfg: TrainConfig, loss_fn, params, objective: str, eval_fn, snapshots) -> LossTrace:
        steps = cfg.total_steps(n_items)
        rng = np.random.default_rng(cfg.seed)
        opt, sched = self._optimizer(params, cfg, steps)
        trace = LossTrace(objective)
        best_acc, best_state = -np.inf, None
        order: list[int] = []
        if snapshots is not None:
            snapshots.append((0, self.snapshot_layers()))
        self.model.train()
        for step in range(1, steps + 1):
            if len(order) < cfg.batch_size:
                order.extend(rng.permutation(n_items).tolist())
            batch = order[: cfg.batch_size]
            del order[: cfg.batch_size]
            loss, probe = loss_fn(batch)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            sched.step()
            trace.log(step, float(loss.detach()), probe)
            if eval_fn is not None and cfg.eval_interval and (step % cfg.eval_interval == 0 or step == steps):
                self.model.eval()
                with torch.no_grad():
                    acc = float(eval_fn(self))
                self.model.train()
                trace.set_dev_accuracy(step, acc)
                if cfg.selection == "best_dev" and acc > best_acc:
                    best_acc, best_state = acc, self._state_copy()
            if snapshots is not None and cfg.snapshot_interval and step % cfg.snapshot_interval == 0:
                snapshots.append((step, self.snapshot_layers()))
        if best_state is not None:
            self._load_state(best_state)
        self.model.eval()
        self.last_trace = trace
        return trace

    def _state_copy(self) -> dict:
        state = {"model": copy.deepcopy(self.model.state_dict())}
        if self.head is not None:
            state["head"] = copy.deepcopy(self.head.state_dict())
        return state

    def _load_state(self, state: dict) -> None:
        self.model.load_state_dict(state["model"])
        if self.head is not None and "head" in state:
            self.head.load_state_dict(state["head"])

    # -- generative ---------------------------------------------------------

    def fit_generative(self, sequences: Sequence[TaskSequence], cfg: TrainConfig, eval_fn=None, snapshots: list | None = None) -> LossTrace:
        seqs = list(sequences)
        if not seqs:
            raise EmptyTrainingSet("no training sequences")
        for s in seqs:
            if s.role != "train":
                raise ValueError(f"sequence for {s.example_id!r} has role {s.role!r}, expected 'train'")
        _seed_everything(cfg.seed)
        encoded = self._encode_train(seqs, cfg, cfg.label_position_loss)

        def loss_fn(batch: list[int]):
            ids, att, probe_mask = self._pad([encoded[i][0] for i in batch], [encoded[i][1] for i in batch])
            labels = ids.masked_fill(att == 0, -100)
            out = self.model(input_ids=ids, attention_mask=att)
            logits = out.logits[:, :-1].float()
            target = labels[:, 1:]
            flat = nn.functional.cross_entropy(
                logits.reshape(-1, logits.size(-1)), target.reshape(-1), ignore_index=-100, reduction="none"
            ).view_as(target)
            valid = target != -100
            loss = flat[valid].mean()
            probe = None
            if cfg.label_position_loss:
                pm = probe_mask[:, 1:] & valid
                probe = float(flat[pm].mean().detach()) if pm.any() else float("nan")
            return loss, probe

        return self._train(len(seqs), cfg, loss_fn, list(self.model.parameters()), "lm", eval_fn, snapshots)

    @torch.no_grad()
    def generate(self, prompt: TaskSequence, max_new_tokens: int) -> str:
        if prompt.role != "prompt":
            raise ValueError(f"generate needs a prompt, got role {prompt.role!r}")
        ids = self.tokenizer(prompt.text, add_special_tokens=False)["input_ids"]
        if len(ids) >= self.context_size:
            raise PromptTooLong(f"{prompt.example_id}: {len(ids)} prompt tokens fill the {self.context_size}-token context")
        budget = min(max_new_tokens, self.context_size - len(ids))
        if budget <= 0:
            return ""
        self.model.eval()
        eos = self.tokenizer.eos_token_id
        inp = torch.tensor([ids], device=self.device)
        past = None
        out_ids: list[int] = []
        text = ""
        for _ in range(budget):
            out = self.model(input_ids=inp, past_key_values=past, use_cache=True)
            past = out.past_key_values
            nxt = int(out.logits[0, -1].argmax())
            if nxt == eos:
                break
            out_ids.append(nxt)
            text = self.tokenizer.decode(out_ids)
            text, stopped = cut_at_stop(text, prompt.stop_string)
            if stopped:
                return text
            inp = torch.tensor([[nxt]], device=self.device)
        return text

    def generate_batch(self, prompts: Sequence[TaskSequence], max_new_tokens: int) -> list[str]:
        # Sequential on purpose: padded batches change greedy outputs in the last bits.
        return [self.generate(p, max_new_tokens) for p in prompts]

    # -- classifier ablation --------------------------------------------------

    def attach_head(self, n_classes: int, seed: int = 0) -> None:
        if n_classes < 2:
            raise ValueError("a classifier needs n_classes >= 2")
        g = torch.Generator().manual_seed(seed)
        hidden = self.model.config.hidden_size if hasattr(self.model.config, "hidden_size") else self.model.config.n_embd
        head = nn.Linear(hidden, n_classes)
        with torch.no_grad():
            bound = 1.0 / hidden**0.5
            head.weight.copy_(torch.empty_like(head.weight).uniform_(-bound, bound, generator=g))
            head.bias.zero_()
        self.head = head.to(self.device)
        self.n_classes = n_classes

    def _last_hidden(self, ids: torch.Tensor, att: torch.Tensor) -> torch.Tensor:
        out = self.model(input_ids=ids, attention_mask=att, output_hidden_states=True)
        hidden = out.hidden_states[-1]
        last = att.sum(dim=1) - 1
        return hidden[torch.arange(hidden.size(0), device=hidden.device), last]

    def fit_classifier(self, items: Sequence[tuple[str, int]], n_classes: int, cfg: TrainConfig, eval_fn=None, snapshots: list | None = None) -> LossTrace:
        items = list(items)
        if not items:
            raise EmptyTrainingSet("no classifier items")
        _seed_everything(cfg.seed)
        self.attach_head(n_classes, cfg.seed)
        limit = min(cfg.max_seq_len, self.context_size)
        encoded = []
        for text, y in items:
            if not 0 <= y < n_classes:
                raise ValueError(f"class index {y} outside [0, {n_classes})")
            ids = self.tokenizer(text, add_special_tokens=False)["input_ids"]
            if len(ids) > limit:
                raise SequenceTooLong(f"{len(ids)} tokens > max_seq_len {limit}")
            encoded.append((ids, y))

        def loss_fn(batch: list[int]):
            ids, att, _ = self._pad([encoded[i][0] for i in batch])
            y = torch.tensor([encoded[i][1] for i in batch], device=self.device)
            logits = self.head(self._last_hidden(ids, att)).float()
            loss = nn.functional.cross_entropy(logits, y)
            return loss, float(loss.detach())

        params = list(self.model.parameters()) + list(self.head.parameters())
        return self._train(len(items), cfg, loss_fn, params, "classifier", eval_fn, snapshots)

    @torch.no_grad()
    def predict_class(self, text: str) -> int:
        if self.head is None:
            raise ValueError("no classifier head attached; call fit_classifier first")
        self.model.eval()
        ids, att, _ = self._pad([self.tokenizer(text, add_special_tokens=False)["input_ids"]])
        return int(self.head(self._last_hidden(ids, att)).argmax(dim=-1)[0])

    # -- introspection and persistence ----------------------------------------

    def snapshot_layers(self) -> dict[str, np.ndarray]:
        """Parameters grouped into ``embedding``, ``block_<i>`` and ``head``.

        Token/position embeddings form ``embedding``; everything under the
        i-th transformer block forms ``block_i``; the final norm, an untied
        LM head and the classifier head (if attached) form ``head``. Tied
        weights are counted once, under ``embedding``.
        """
        groups: dict[str, list[np.ndarray]] = {}
        n_blocks = 0
        for name, p in self.model.named_parameters():
            m = _BLOCK.match(name)
            if m:
                key = f"block_{int(m.group(1))}"
                n_blocks = max(n_blocks, int(m.group(1)) + 1)
            elif any(t in name for t in ("wte", "wpe", "embed")):
                key = "embedding"
            else:
                key = "head"
            groups.setdefault(key, []).append(p.detach().float().cpu().numpy().ravel().copy())
        if self.head is not None:
            for p in self.head.parameters():
                groups.setdefault("head", []).append(p.detach().float().cpu().numpy().ravel().copy())
        ordered = ["embedding", *(f"block_{i}" for i in range(n_blocks)), "head"]
        return {k: np.concatenate(groups[k]) for k in ordered if k in groups}

    def config(self) -> dict:
        return {"backend": self.kind, "name": self.name, "n_classes": self.n_classes}

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        self.model.save_pretrained(d / "model")
        self.tokenizer.save_pretrained(d / "model")
        if self.head is not None:
            torch.save(self.head.state_dict(), d / "head.pt")
        (d / "config.json").write_text(json.dumps(self.config(), indent=2), encoding="utf-8")

    @classmethod
    def load(cls, directory: str | Path) -> "TransformersBackend":
        from transformers import AutoModelForCausalLM, AutoTokenizer

        d = Path(directory)
        cfg = json.loads((d / "config.json").read_text(encoding="utf-8"))
        b = cls(AutoModelForCausalLM.from_pretrained(d / "model"), AutoTokenizer.from_pretrained(d / "model"), cfg.get("name", ""))
        if cfg.get("n_classes", 0) >= 2:
            b.attach_head(cfg["n_classes"])
            b.head.load_state_dict(torch.load(d / "head.pt"))
        b.to("cuda" if torch.cuda.is_available() else "cpu")
        return b
