from __future__ import annotations

import random

import pytest

import fuzz
import oracles
from genabsa.core_types import ABSA_LABELS, CategoryPair, Domain, Example, Polarity, PredictionRecord, Source, TaskMode, TermPair
from genabsa.errors import EmptyInput, MissingPrediction
from genabsa.metrics import (
    RunReport,
    aggregate,
    extraction_prf,
    format_mean_std,
    joint_accuracy,
    metric_names,
    polarity_accuracy,
    prediction_counts,
    score,
)

P, N, C = Polarity("positive"), Polarity("negative"), Polarity("conflict")


def _ex(i, terms=(), cats=()):
    return Example(i, "s", tuple(TermPair(t, p) for t, p in terms), tuple(CategoryPair(c, p) for c, p in cats), None, Domain.RESTAURANT, Source.SEMEVAL14)


GOLD = [_ex("1", [("food", P), ("service", N)]), _ex("2", [("wine", C)]), _ex("3")]


def test_joint_metrics_hand_computed():
    preds = [
        PredictionRecord("1", TaskMode.JOINT_TERM, pairs=(("Food", "positive"), ("service", "positive"))),
        PredictionRecord("2", TaskMode.JOINT_TERM, pairs=(("wine", "conflict"),)),
        PredictionRecord("3", TaskMode.JOINT_TERM, pairs=(("bread", "neutral"),)),
    ]
    assert polarity_accuracy(preds, GOLD, TaskMode.JOINT_TERM) == pytest.approx(2 / 3)
    prf = extraction_prf(preds, GOLD, "term")
    assert (prf.tp, prf.n_pred, prf.n_gold) == (3, 4, 3)
    assert prf.f1 == pytest.approx(2 * 0.75 * 1.0 / 1.75)
    assert joint_accuracy(preds, GOLD, TaskMode.JOINT_TERM) == pytest.approx(1 / 3)


def test_duplicates_are_multisets_for_joint_and_sets_for_f1():
    gold = [_ex("1", [("food", P), ("food", P)])]
    once = [PredictionRecord("1", TaskMode.JOINT_TERM, pairs=(("food", "positive"),))]
    assert joint_accuracy(once, gold, TaskMode.JOINT_TERM) == 0.0
    assert polarity_accuracy(once, gold, TaskMode.JOINT_TERM) == 0.5
    assert extraction_prf(once, gold, "term").f1 == 1.0


def test_empty_everything_scores_f1_one():
    preds = [PredictionRecord("3", TaskMode.JOINT_TERM)]
    assert extraction_prf(preds, [GOLD[2]], "term").f1 == 1.0
    assert joint_accuracy(preds, [GOLD[2]], TaskMode.JOINT_TERM) == 1.0


def test_single_mode_needs_every_target():
    preds = [PredictionRecord("1", TaskMode.SINGLE_TERM, label="positive", target="food")]
    with pytest.raises(MissingPrediction):
        polarity_accuracy(preds, GOLD[:1], TaskMode.SINGLE_TERM)
    preds.append(PredictionRecord("1", TaskMode.SINGLE_TERM, label="negative", target="Service"))
    assert polarity_accuracy(preds, GOLD[:1], TaskMode.SINGLE_TERM) == 1.0


def test_missing_joint_record_counts_as_empty_and_parse_failure():
    preds = [PredictionRecord("1", TaskMode.JOINT_TERM, pairs=(("food", "positive"), ("service", "negative")))]
    assert joint_accuracy(preds, GOLD, TaskMode.JOINT_TERM) == pytest.approx(2 / 3)  # "3" is empty in gold too
    counts = prediction_counts(preds, GOLD, TaskMode.JOINT_TERM)
    assert counts["missing"] == 2 and counts["parse_failures"] == 2


def test_multi_requires_both_segments():
    gold = [_ex("1", [("food", P)], [("food", P)])]
    good = [PredictionRecord("1", TaskMode.MULTI, pairs=(("food", "positive"),), categories=(("food", "positive"),))]
    half = [PredictionRecord("1", TaskMode.MULTI, pairs=(("food", "positive"),))]
    assert joint_accuracy(good, gold, TaskMode.MULTI) == 1.0
    assert joint_accuracy(half, gold, TaskMode.MULTI) == 0.0
    assert score(half, gold, TaskMode.MULTI)["sb1_f1"] == 1.0
    with pytest.raises(ValueError):
        polarity_accuracy(half, gold, TaskMode.MULTI)


def test_metric_names():
    assert metric_names(TaskMode.MULTI) == ["joint_accuracy", "sb1_f1", "sb2_acc", "sb3_f1", "sb4_acc"]
    assert metric_names(TaskMode.SINGLE_CATEGORY) == ["sb4_acc"]


def test_aggregate_population_std():
    agg = aggregate([0.5, 0.7])
    assert agg["mean"] == pytest.approx(0.6)
    assert agg["std"] == pytest.approx(0.1)
    assert aggregate([0.3]) == {"mean": 0.3, "std": 0.0}
    with pytest.raises(EmptyInput):
        aggregate([])


def test_format_mean_std():
    assert format_mean_std(0.6007, 0.0052) == "60.07 ± 0.52"


def test_run_report_round_trip(tmp_path):
    r = RunReport("x", TaskMode.JOINT_TERM, {"0": {"sb1_f1": 0.5}, "1": {"sb1_f1": 0.7}}, {"examples": 3}, "1%")
    r.save(tmp_path / "r.json")
    back = RunReport.load(tmp_path / "r.json")
    assert back.per_seed == r.per_seed and back.shot == "1%"
    assert back.aggregate["sb1_f1"]["std"] == pytest.approx(0.1)
    r.write_csv(tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().splitlines()[-1].startswith("std,")


@pytest.mark.parametrize("mode", [TaskMode.JOINT_TERM, TaskMode.JOINT_CATEGORY, TaskMode.MULTI])
def test_against_oracles_with_fuzzed_data(mode):
    rng = random.Random(hash(mode.value) % 1000)
    for _ in range(100):
        examples = [fuzz.simple_example(rng, i) for i in range(rng.randint(0, 10))]
        preds = fuzz.fuzz_predictions(rng, examples, mode, ABSA_LABELS)
        assert joint_accuracy(preds, examples, mode) == pytest.approx(oracles.oracle_joint_accuracy(preds, examples, mode), abs=1e-12)
        for seg in (["term", "category"] if mode == TaskMode.MULTI else ["term" if mode == TaskMode.JOINT_TERM else "category"]):
            assert polarity_accuracy(preds, examples, mode, seg) == pytest.approx(
                oracles.oracle_polarity_accuracy(preds, examples, mode, seg), abs=1e-12
            )
