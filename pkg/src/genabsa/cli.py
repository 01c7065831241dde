"""Command-line entry point: ``genabsa <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from .core_types import Split, TaskMode, read_jsonl, write_jsonl, write_predictions
from .corpus_io import CorpusSpec, load_corpus
from .errors import GenAbsaError
from .fewshot import ShotSpec
from .lm_backend import TrainConfig, get_backend, load_backend, save_checkpoint
from .metrics import RunReport, format_mean_std
from .report import emit_report
from .runner import (
    ExperimentConfig,
    classifier_items,
    label_set,
    predict_dataset,
    run_experiment,
    sample_subset,
    score_external,
    training_sequences,
)
from .seqcodec import TaskSequence, prompts_for

MODES = [m.value for m in TaskMode]


def _train_config(args) -> TrainConfig:
    values = {}
    if args.train_config:
        values.update(yaml.safe_load(Path(args.train_config).read_text(encoding="utf-8")) or {})
    for key in ("max_steps", "epochs", "batch_size", "learning_rate", "max_seq_len", "seed"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    if args.epochs is not None and args.max_steps is None:
        values["max_steps"] = None
    if args.label_position_loss:
        values["label_position_loss"] = True
    return TrainConfig.from_dict(values)


def cmd_ingest(args) -> int:
    paths = {"train": args.train, "test": args.test}
    if args.dev:
        paths["dev"] = args.dev
    spec = CorpusSpec(args.source, args.domain, paths, args.trial)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for split, ds in load_corpus(spec).items():
        write_jsonl(ds, out / f"{split}.jsonl")
        print(f"{split}: {len(ds)} examples -> {out / f'{split}.jsonl'}")
    return 0


def cmd_sample(args) -> int:
    train = read_jsonl(args.data)
    value = float(args.value) if args.shot_mode == "fraction" else int(args.value)
    subset = sample_subset(train, ShotSpec(args.shot_mode, value, args.seed), TaskMode(args.task_mode))
    write_jsonl(subset, args.out)
    print(f"sampled {len(subset)} of {len(train)} examples -> {args.out}")
    return 0


def cmd_encode(args) -> int:
    data = read_jsonl(args.data)
    mode = TaskMode(args.task_mode)
    if args.prompts:
        seqs = [p for ex in data for p in prompts_for(ex, mode)]
    else:
        seqs = training_sequences(data, mode, args.split_format)
    with Path(args.out).open("w", encoding="utf-8") as f:
        for s in seqs:
            f.write(json.dumps(s.to_dict(), ensure_ascii=False) + "\n")
    print(f"{len(seqs)} sequences -> {args.out}")
    return 0


def _read_sequences(path: str) -> list[TaskSequence]:
    with open(path, encoding="utf-8") as f:
        return [TaskSequence.from_dict(json.loads(line)) for line in f if line.strip()]


def cmd_train(args) -> int:
    cfg = _train_config(args)
    model = get_backend(args.backend)
    if args.classifier:
        data = read_jsonl(args.data)
        mode = TaskMode(args.task_mode)
        labels = label_set(data, mode)
        trace = model.fit_classifier(classifier_items(data, mode, labels), len(labels), cfg)
    else:
        trace = model.fit_generative(_read_sequences(args.sequences), cfg)
    out = save_checkpoint(model, args.out, {"train": cfg.to_dict()})
    trace.to_csv(out / "loss_trace.csv")
    print(f"{len(trace)} steps, lm_loss {trace.lm_losses[0]:.4f} -> {trace.lm_losses[-1]:.4f}; checkpoint {out}")
    return 0


def cmd_predict(args) -> int:
    model = load_backend(args.checkpoint)
    data = read_jsonl(args.data, split=Split.TEST)
    mode = TaskMode(args.task_mode)
    labels = label_set(read_jsonl(args.labels_from) if args.labels_from else data, mode)
    method = "classifier" if args.classifier else "generative"
    preds = predict_dataset(model, data, mode, labels, method=method, max_new_tokens=args.max_new_tokens)
    write_predictions(preds, args.out)
    print(f"{len(preds)} predictions -> {args.out}")
    return 0


def cmd_score(args) -> int:
    report = score_external(args.predictions, args.gold, TaskMode(args.task_mode), args.name)
    for metric, value in report.per_seed["external"].items():
        print(f"{metric}: {value * 100:.2f}")
    if args.out:
        report.save(args.out)
    return 0


def cmd_sweep(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if args.jobs is not None:
        cfg.jobs = args.jobs
    if args.output_dir:
        cfg.output_dir = args.output_dir
    for r in run_experiment(cfg):
        cells = ", ".join(f"{m} {format_mean_std(a['mean'], a['std'])}" for m, a in r.aggregate.items())
        print(f"{r.shot}: {cells}")
    print(f"manifest: {cfg.run_dir / 'manifest.json'}")
    return 0


def cmd_report(args) -> int:
    reports = [RunReport.load(p) for p in args.reports]
    for path in emit_report(reports, args.out, args.formats):
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="genabsa", description="Generative aspect-based sentiment analysis harness")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="read a raw corpus into canonical JSONL splits")
    s.add_argument("--source", required=True, choices=["semeval14", "semeval16", "sst2", "sst5", "oos"])
    s.add_argument("--domain", required=True, choices=["restaurant", "laptop", "movie", "dialog"])
    s.add_argument("--train", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--dev")
    s.add_argument("--trial", help="official trial file; carved out of train as dev")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("sample", help="draw a seeded few-shot subset")
    s.add_argument("--data", required=True, help="train JSONL")
    s.add_argument("--task-mode", required=True, choices=MODES)
    s.add_argument("--shot-mode", default="fraction", choices=["fraction", "per_class"])
    s.add_argument("--value", required=True, help="fraction in (0, 1] or k per class")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("encode", help="render training sequences or inference prompts")
    s.add_argument("--data", required=True)
    s.add_argument("--task-mode", required=True, choices=MODES)
    s.add_argument("--split-format", action="store_true", help="one aspect pair per training sequence")
    s.add_argument("--prompts", action="store_true", help="emit inference prompts instead")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("train", help="fine-tune a backend and save a checkpoint")
    s.add_argument("--backend", default="mock", help="'mock' or 'hf:<model name or path>'")
    s.add_argument("--sequences", help="training sequences JSONL (generative)")
    s.add_argument("--classifier", action="store_true", help="train the classification-head ablation")
    s.add_argument("--data", help="examples JSONL (classifier)")
    s.add_argument("--task-mode", choices=MODES)
    s.add_argument("--train-config", help="YAML/JSON TrainConfig")
    s.add_argument("--max-steps", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--learning-rate", type=float)
    s.add_argument("--max-seq-len", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--label-position-loss", action="store_true")
    s.add_argument("--out", required=True, help="checkpoint directory")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="generate and decode predictions")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True, help="test JSONL")
    s.add_argument("--task-mode", required=True, choices=MODES)
    s.add_argument("--classifier", action="store_true")
    s.add_argument("--labels-from", help="JSONL whose labels define the label set (default: --data)")
    s.add_argument("--max-new-tokens", type=int, default=64)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("score", help="score a prediction file against gold")
    s.add_argument("--predictions", required=True)
    s.add_argument("--gold", required=True)
    s.add_argument("--task-mode", required=True, choices=MODES)
    s.add_argument("--name")
    s.add_argument("--out", help="write the RunReport JSON here")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("sweep", help="run a full experiment from a config or manifest file")
    s.add_argument("--config", required=True)
    s.add_argument("--jobs", type=int, help="worker processes (default: GENABSA_JOBS or 1)")
    s.add_argument("--output-dir")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("report", help="tables and charts from RunReport JSON files")
    s.add_argument("reports", nargs="+")
    s.add_argument("--out", required=True)
    s.add_argument("--formats", nargs="+", default=["csv", "md", "svg"], choices=["csv", "md", "svg"])
    s.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "train":
        if args.classifier and not (args.data and args.task_mode):
            build_parser().error("train --classifier needs --data and --task-mode")
        if not args.classifier and not args.sequences:
            build_parser().error("train needs --sequences (or --classifier)")
    try:
        return args.func(args)
    except (GenAbsaError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
