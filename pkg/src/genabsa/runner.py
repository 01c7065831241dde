"""End-to-end experiments: sample, encode, fine-tune, generate, decode, score, report.

One job is one (shot level, seed) pair. Every job owns its directory under
``<output_dir>/<name>/jobs`` and marks completion with a ``DONE`` file, so a
killed sweep can be resumed and finished jobs are never rewritten.
"""

from __future__ import annotations

import json
import logging
import multiprocessing
import re
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import yaml

from . import __version__
from .core_types import (
    ABSA_LABELS,
    SST2_LABELS,
    SST5_LABELS,
    Dataset,
    Domain,
    Example,
    PolaritySet,
    PredictionRecord,
    Source,
    Split,
    TaskMode,
    infer_labels,
    read_jsonl,
    read_predictions,
    write_predictions,
)
from .corpus_io import CorpusSpec, load_corpus
from .diagnostics import UPDATE_DEFINITION, UpdateTracker, write_update_csv
from .errors import EmptyTrain, ExperimentFailed, IncompatibleMode
from .fewshot import RNG_ALGORITHM, ShotSpec, class_keys_for, sample
from .lm_backend import DECODING, LOSS_AVERAGING, TrainConfig, default_jobs, get_backend, save_checkpoint
from .metrics import RunReport, metric_names, prediction_counts, score
from .seqcodec import CODEC_FLAGS, decode_pairs, encode_prompt, encode_training, prompts_for

log = logging.getLogger(__name__)

FULL = ("all", "full")


@dataclass
class ExperimentConfig:
    """Declarative description of a sweep over shot levels and seeds.

    Data comes either from ``corpus`` (raw SemEval/SST/OOS files) or from
    ``data``, a ``{split: path}`` map of canonical JSONL files as written by
    ``genabsa ingest``. Shot levels are fractions for ``shot_mode:
    fraction`` and integers k for ``per_class``; ``all`` means the whole
    training set. ``freeze_subset`` draws every seed's subset with the first
    seed, so seeds then differ only in model initialisation and batch order.
    """

    name: str
    task_mode: TaskMode
    corpus: CorpusSpec | None = None
    data: dict[str, str] | None = None
    shot_mode: str = "fraction"
    shots: list = field(default_factory=lambda: [1.0])
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3])
    split_format: bool = False
    backend: str = "mock"
    backend_options: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    method: str = "generative"  # | "classifier"
    output_dir: str = "runs"
    max_new_tokens: int = 64
    dev_limit: int | None = 200
    test_limit: int | None = None
    save_checkpoints: bool = False
    jobs: int | None = None
    freeze_subset: bool = False

    def __post_init__(self) -> None:
        self.task_mode = TaskMode(self.task_mode)
        self.shot_mode = self.shot_mode.replace("-", "_")
        if isinstance(self.corpus, dict):
            self.corpus = CorpusSpec.from_dict(self.corpus)
        if isinstance(self.train, dict):
            self.train = TrainConfig.from_dict(self.train)
        if (self.corpus is None) == (self.data is None):
            raise ValueError("give exactly one of 'corpus' or 'data'")
        if self.data is not None and ("train" not in self.data or "test" not in self.data):
            raise ValueError("'data' needs at least 'train' and 'test' paths")
        if not self.shots:
            raise ValueError("at least one shot level is required")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        self.seeds = [int(s) for s in self.seeds]
        if self.method not in ("generative", "classifier"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.method == "classifier" and not (self.task_mode.is_single or self.task_mode == TaskMode.SENTENCE_LABEL):
            raise IncompatibleMode("the classifier ablation predicts one label per prompt; use a single-task or sentence mode")
        self.shot_specs(0)  # validates the levels
        if self.corpus is not None:
            check_mode_supported(self.corpus.source, self.corpus.domain, self.task_mode)

    def shot_specs(self, seed: int) -> list[ShotSpec]:
        out = []
        for level in self.shots:
            if isinstance(level, str) and level.lower() in FULL:
                out.append(ShotSpec("fraction", 1.0, seed))
            else:
                out.append(ShotSpec(self.shot_mode, level, seed))
        return out

    @property
    def run_dir(self) -> Path:
        return Path(self.output_dir) / self.name

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "task_mode": self.task_mode.value,
            "corpus": self.corpus.to_dict() if self.corpus else None,
            "data": dict(self.data) if self.data else None,
            "shot_mode": self.shot_mode,
            "shots": list(self.shots),
            "seeds": list(self.seeds),
            "split_format": self.split_format,
            "backend": self.backend,
            "backend_options": dict(self.backend_options),
            "train": self.train.to_dict(),
            "method": self.method,
            "output_dir": self.output_dir,
            "max_new_tokens": self.max_new_tokens,
            "dev_limit": self.dev_limit,
            "test_limit": self.test_limit,
            "save_checkpoints": self.save_checkpoints,
            "jobs": self.jobs,
            "freeze_subset": self.freeze_subset,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        """Read a YAML or JSON config file (JSON is valid YAML)."""
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        if not isinstance(raw, dict):
            raise ValueError(f"{path}: expected a mapping")
        if "config" in raw and "sampled_ids" in raw:  # a RunManifest
            raw = raw["config"]
        return cls.from_dict(raw)


def check_mode_supported(source: Source | str, domain: Domain | str, mode: TaskMode) -> None:
    source, domain, mode = Source(source), Domain(domain), TaskMode(mode)
    if source in (Source.SST2, Source.SST5, Source.OOS):
        if mode != TaskMode.SENTENCE_LABEL:
            raise IncompatibleMode(f"{source.value} only supports sentence_label")
        return
    if mode == TaskMode.SENTENCE_LABEL:
        raise IncompatibleMode(f"{source.value} has aspect annotations, not sentence labels")
    probe = Example("probe", "probe", (), (), None, domain, source)
    if mode.uses_terms and not probe.has_terms:
        raise IncompatibleMode(f"{source.value} {domain.value} has no aspect terms ({mode.value})")
    if mode.uses_categories and not probe.has_categories:
        raise IncompatibleMode(f"{source.value} {domain.value} has no aspect categories ({mode.value})")


@dataclass
class RunManifest:
    """Everything needed to reproduce a sweep given the same backend weights."""

    config: dict
    sampled_ids: dict[str, dict[str, list[str]]] = field(default_factory=dict)
    codec_flags: dict = field(default_factory=lambda: dict(CODEC_FLAGS))
    backend: dict = field(default_factory=dict)
    checkpoints: dict[str, str] = field(default_factory=dict)
    reports: list[str] = field(default_factory=list)
    jobs: dict[str, str] = field(default_factory=dict)
    tool_version: str = __version__
    rng_algorithm: str = RNG_ALGORITHM
    started_at: str = ""
    wall_clock_seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "sampled_ids": self.sampled_ids,
            "codec_flags": self.codec_flags,
            "backend": self.backend,
            "checkpoints": self.checkpoints,
            "reports": self.reports,
            "jobs": self.jobs,
            "tool_version": self.tool_version,
            "rng_algorithm": self.rng_algorithm,
            "started_at": self.started_at,
            "wall_clock_seconds": self.wall_clock_seconds,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, ensure_ascii=False), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


# --- data helpers -----------------------------------------------------------------


def load_splits(cfg: ExperimentConfig) -> dict[str, Dataset]:
    if cfg.corpus is not None:
        return load_corpus(cfg.corpus)
    splits = {}
    for split, path in cfg.data.items():
        splits[Split(split).value] = read_jsonl(path, cfg.name, split)
    first = next(iter(splits["train"]), None)
    if first is not None:
        check_mode_supported(first.source, first.domain, cfg.task_mode)
    return splits


def label_set(train: Dataset, mode: TaskMode) -> PolaritySet:
    """Labels the decoder may produce (and the classifier's class order)."""
    if TaskMode(mode) != TaskMode.SENTENCE_LABEL:
        return ABSA_LABELS
    first = next(iter(train), None)
    if first is not None and first.source == Source.SST2:
        return SST2_LABELS
    if first is not None and first.source == Source.SST5:
        return SST5_LABELS
    return infer_labels(train, train.name)


def training_pool(train: Dataset, mode: TaskMode) -> Dataset:
    """Examples eligible for sampling; single-task modes need at least one target."""
    mode = TaskMode(mode)
    if mode == TaskMode.SINGLE_TERM:
        keep = tuple(ex for ex in train if ex.terms)
    elif mode == TaskMode.SINGLE_CATEGORY:
        keep = tuple(ex for ex in train if ex.categories)
    else:
        return train
    if not keep:
        raise EmptyTrain(f"no example of {train.name} has a {mode.value} target")
    return Dataset(train.name, keep, train.split)


def sample_subset(train: Dataset, spec: ShotSpec, mode: TaskMode) -> Dataset:
    pool = training_pool(train, mode)
    return sample(pool, spec, class_keys_for(TaskMode(mode).value) if spec.mode == "per_class" else None)


def training_sequences(examples: Dataset | Sequence[Example], mode: TaskMode, split_format: bool = False):
    return [s for ex in examples for s in encode_training(ex, mode, split_format)]


def classifier_items(examples: Dataset | Sequence[Example], mode: TaskMode, labels: PolaritySet) -> list[tuple[str, int]]:
    """(prompt text, class index) pairs; the prompt is what the generative model sees."""
    mode = TaskMode(mode)
    items = []
    for ex in examples:
        if mode == TaskMode.SENTENCE_LABEL:
            items.append((encode_prompt(ex, mode).text, labels.index(ex.sentence_label)))
            continue
        pairs = ex.terms if mode == TaskMode.SINGLE_TERM else ex.categories
        for p, prompt in zip(pairs, prompts_for(ex, mode)):
            items.append((prompt.text, labels.index(p.polarity)))
    return items


def predict_dataset(
    model,
    examples: Dataset | Sequence[Example],
    mode: TaskMode,
    labels: PolaritySet,
    *,
    method: str = "generative",
    max_new_tokens: int = 64,
) -> list[PredictionRecord]:
    """Prompt the model for every example (every gold target in single modes) and decode."""
    mode = TaskMode(mode)
    prompts = [p for ex in examples for p in prompts_for(ex, mode)]
    if method == "classifier":
        out = []
        for p in prompts:
            label = labels.labels[model.predict_class(p.text)]
            pairs = ((p.target, label),) if p.target is not None else ()
            out.append(PredictionRecord(p.example_id, mode, pairs=pairs, label=label, target=p.target, raw=label))
        return out
    texts = model.generate_batch(prompts, max_new_tokens)
    return [decode_pairs(t, mode, labels, example_id=p.example_id, target=p.target) for p, t in zip(prompts, texts)]


def predictions_from_gold(examples: Dataset | Sequence[Example], mode: TaskMode) -> list[PredictionRecord]:
    """Records that reproduce gold exactly; handy as an upper-bound sanity check."""
    mode = TaskMode(mode)
    out = []
    for ex in examples:
        terms = tuple((p.term, p.polarity.label) for p in ex.terms)
        cats = tuple((p.category, p.polarity.label) for p in ex.categories)
        if mode == TaskMode.SENTENCE_LABEL:
            out.append(PredictionRecord(ex.id, mode, label=ex.sentence_label.label))
        elif mode.is_single:
            for target, label in terms if mode == TaskMode.SINGLE_TERM else cats:
                out.append(PredictionRecord(ex.id, mode, pairs=((target, label),), label=label, target=target))
        elif mode == TaskMode.MULTI:
            out.append(PredictionRecord(ex.id, mode, pairs=terms, categories=cats))
        else:
            out.append(PredictionRecord(ex.id, mode, pairs=terms if mode == TaskMode.JOINT_TERM else cats))
    return out


def _limit(ds: Dataset | None, n: int | None) -> Dataset | None:
    if ds is None or n is None or len(ds) <= n:
        return ds
    return Dataset(ds.name, ds.examples[:n], ds.split)


def _slug(s: str) -> str:
    return re.sub(r"[^A-Za-z0-9.-]+", "_", s.replace("%", "pct")).strip("_")


def job_dir(cfg: ExperimentConfig, spec: ShotSpec) -> Path:
    return cfg.run_dir / "jobs" / _slug(spec.label) / f"seed_{spec.seed}"


# --- one job ------------------------------------------------------------------------


def run_job(
    cfg: ExperimentConfig,
    splits: dict[str, Dataset],
    spec: ShotSpec,
    backend_factory: Callable[[int], object] | None = None,
) -> dict:
    """Run one (shot level, seed) job and return its result summary.

    Writes sampled ids, sequences, loss trace, predictions and metrics into
    the job directory, then ``DONE``. On error a ``FAILED`` file holding the
    traceback is written and the exception propagates.
    """
    out = job_dir(cfg, spec)
    out.mkdir(parents=True, exist_ok=True)
    job_cfg = {"experiment": cfg.to_dict(), "shot": {"mode": spec.mode, "value": spec.value, "seed": spec.seed}}
    done = out / "DONE"
    if done.exists():
        prev = json.loads(done.read_text(encoding="utf-8"))
        if prev.get("job_config") == json.loads(json.dumps(job_cfg)):
            log.info("reusing finished job %s", out)
            return prev
        done.unlink()
    (out / "FAILED").unlink(missing_ok=True)
    started = time.time()
    try:
        result = _run_job(cfg, splits, spec, out, backend_factory)
    except BaseException:
        (out / "FAILED").write_text(traceback.format_exc(), encoding="utf-8")
        raise
    result["job_config"] = job_cfg
    result["seconds"] = round(time.time() - started, 3)
    done.write_text(json.dumps(result, indent=2, ensure_ascii=False), encoding="utf-8")
    return result


def _run_job(cfg: ExperimentConfig, splits: dict[str, Dataset], spec: ShotSpec, out: Path, backend_factory) -> dict:
    mode = cfg.task_mode
    train = splits["train"]
    test = _limit(splits["test"], cfg.test_limit)
    dev = _limit(splits.get("dev"), cfg.dev_limit)
    labels = label_set(train, mode)

    sample_spec = replace(spec, seed=cfg.seeds[0]) if cfg.freeze_subset else spec
    subset = sample_subset(train, sample_spec, mode)
    ids = [ex.id for ex in subset]
    (out / "sampled_ids.json").write_text(json.dumps(ids), encoding="utf-8")

    train_cfg = replace(cfg.train, seed=spec.seed)
    if backend_factory is not None:
        model = backend_factory(spec.seed)
    elif cfg.backend == "mock":
        model = get_backend("mock", seed=spec.seed, **cfg.backend_options)
    else:
        model = get_backend(cfg.backend, **cfg.backend_options)

    eval_fn = None
    if dev is not None and len(dev) and train_cfg.eval_interval:
        primary = metric_names(mode)[0]

        def eval_fn(m) -> float:
            preds = predict_dataset(m, dev, mode, labels, method=cfg.method, max_new_tokens=cfg.max_new_tokens)
            return score(preds, dev, mode)[primary]

    tracker = UpdateTracker() if train_cfg.snapshot_interval else None
    if cfg.method == "generative":
        seqs = training_sequences(subset, mode, cfg.split_format)
        with (out / "sequences.jsonl").open("w", encoding="utf-8") as f:
            for s in seqs:
                f.write(json.dumps(s.to_dict(), ensure_ascii=False) + "\n")
        trace = model.fit_generative(seqs, train_cfg, eval_fn=eval_fn, snapshots=tracker)
    else:
        items = classifier_items(subset, mode, labels)
        trace = model.fit_classifier(items, len(labels), train_cfg, eval_fn=eval_fn, snapshots=tracker)
    trace.to_csv(out / "loss_trace.csv")
    if tracker is not None and tracker.steps:
        write_update_csv(tracker.series(), out / "updates.csv", tracker.steps)

    preds = predict_dataset(model, test, mode, labels, method=cfg.method, max_new_tokens=cfg.max_new_tokens)
    write_predictions(preds, out / "predictions.jsonl")
    metrics = score(preds, test, mode)
    counts = prediction_counts(preds, test, mode)
    (out / "metrics.json").write_text(json.dumps({"metrics": metrics, "counts": counts}, indent=2), encoding="utf-8")

    checkpoint = None
    if cfg.save_checkpoints:
        checkpoint = str(save_checkpoint(model, out / "checkpoint", {"train": train_cfg.to_dict(), "sampled_ids": ids}))
    return {
        "shot": spec.label,
        "seed": spec.seed,
        "sampled_ids": ids,
        "n_train_examples": len(subset),
        "metrics": metrics,
        "counts": counts,
        "checkpoint": checkpoint,
    }


def _job_worker(cfg_dict: dict, shot: dict) -> dict:
    cfg = ExperimentConfig.from_dict(cfg_dict)
    return run_job(cfg, load_splits(cfg), ShotSpec(shot["mode"], shot["value"], shot["seed"]))


# --- the sweep ------------------------------------------------------------------------


def run_experiment(cfg: ExperimentConfig, backend_factory: Callable[[int], object] | None = None) -> list[RunReport]:
    """Run every (shot level, seed) job and return one RunReport per shot level.

    ``backend_factory(seed)`` overrides backend construction (tests use it to
    inject a scripted mock); it forces in-process execution. Otherwise jobs
    run in ``cfg.jobs`` (or ``GENABSA_JOBS``) worker processes. Failed jobs
    leave a ``FAILED`` marker; reports for the rest are still written and
    ExperimentFailed is raised at the end.
    """
    t0 = time.time()
    run_dir = cfg.run_dir
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        config=cfg.to_dict(),
        backend={"id": cfg.backend, "loss_averaging": LOSS_AVERAGING, "decoding": DECODING, "method": cfg.method},
        started_at=time.strftime("%Y-%m-%dT%H:%M:%S"),
    )
    specs = [spec for seed in cfg.seeds for spec in cfg.shot_specs(seed)]
    jobs = cfg.jobs or default_jobs()
    results: dict[tuple[str, int], dict] = {}
    failures: dict[str, str] = {}

    def key(spec: ShotSpec) -> str:
        return f"{spec.label}/seed_{spec.seed}"

    if backend_factory is not None or jobs <= 1:
        splits = load_splits(cfg)
        for spec in specs:
            try:
                results[(spec.label, spec.seed)] = run_job(cfg, splits, spec, backend_factory)
            except Exception as exc:  # keep going; the job dir holds the traceback
                log.error("job %s failed: %s", key(spec), exc)
                failures[key(spec)] = repr(exc)
    else:
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx) as pool:
            futures = {
                pool.submit(_job_worker, cfg.to_dict(), {"mode": s.mode, "value": s.value, "seed": s.seed}): s for s in specs
            }
            for fut, spec in futures.items():
                try:
                    results[(spec.label, spec.seed)] = fut.result()
                except Exception as exc:
                    log.error("job %s failed: %s", key(spec), exc)
                    failures[key(spec)] = repr(exc)

    for spec in specs:
        manifest.jobs[key(spec)] = "failed" if key(spec) in failures else "done"
        res = results.get((spec.label, spec.seed))
        if res is not None:
            manifest.sampled_ids.setdefault(spec.label, {})[str(spec.seed)] = res["sampled_ids"]
            if res.get("checkpoint"):
                manifest.checkpoints[key(spec)] = res["checkpoint"]

    reports = _reports(cfg, specs, results)
    report_dir = run_dir / "reports"
    report_dir.mkdir(exist_ok=True)
    for r in reports:
        path = report_dir / f"{_slug(r.shot)}.json"
        r.save(path)
        manifest.reports.append(str(path))
    if reports:
        from .report import emit_report

        manifest.reports.extend(str(p) for p in emit_report(reports, report_dir, ("csv", "md", "svg")))
    manifest.wall_clock_seconds = round(time.time() - t0, 3)
    manifest.save(run_dir / "manifest.json")
    if failures:
        raise ExperimentFailed(failures)
    return reports


def _reports(cfg: ExperimentConfig, specs: list[ShotSpec], results: dict) -> list[RunReport]:
    labels = list(dict.fromkeys(s.label for s in specs))
    reports = []
    for label in labels:
        per_seed, counts, meta_seeds = {}, {}, {}
        for spec in specs:
            res = results.get((label, spec.seed)) if spec.label == label else None
            if res is None:
                continue
            per_seed[str(spec.seed)] = res["metrics"]
            meta_seeds[str(spec.seed)] = {"counts": res["counts"], "n_train_examples": res["n_train_examples"]}
            for k, v in res["counts"].items():
                counts[k] = counts.get(k, 0) + v
        if not per_seed:
            continue
        spec0 = next(s for s in specs if s.label == label)
        meta = {
            "shot_mode": spec0.mode,
            "shot_value": spec0.value,
            "method": cfg.method,
            "backend": cfg.backend,
            "split_format": cfg.split_format,
            "per_seed": meta_seeds,
            "update_definition": UPDATE_DEFINITION if cfg.train.snapshot_interval else None,
        }
        reports.append(RunReport(cfg.name, cfg.task_mode, per_seed, counts, label, meta))
    return reports


def score_external(
    predictions_path: str | Path,
    gold_path: str | Path,
    mode: TaskMode,
    name: str | None = None,
) -> RunReport:
    """Score a PredictionRecord JSONL file (e.g. from a discriminative baseline) against gold JSONL."""
    mode = TaskMode(mode)
    preds = read_predictions(predictions_path)
    gold = read_jsonl(gold_path, split=Split.TEST)
    metrics = score(preds, gold, mode)
    counts = prediction_counts(preds, gold, mode)
    return RunReport(
        name or Path(predictions_path).stem,
        mode,
        {"external": metrics},
        counts,
        meta={"predictions": str(predictions_path), "gold": str(gold_path)},
    )
