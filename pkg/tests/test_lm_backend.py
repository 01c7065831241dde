from __future__ import annotations

import math

import numpy as np
import pytest

from genabsa.core_types import Domain, Example, Polarity, Source, TaskMode, TermPair
from genabsa.errors import EmptyTrainingSet, PromptTooLong, SequenceTooLong
from genabsa.lm_backend import (
    LossTrace,
    MockBackend,
    TrainConfig,
    fit_classifier,
    fit_generative,
    generate,
    get_backend,
    load_backend,
    predict_class,
    save_checkpoint,
    snapshot_layers,
)
from genabsa.seqcodec import encode_prompt, encode_training

EX = Example(
    "1",
    "The food was great but the service was slow",
    (TermPair("food", Polarity("positive")), TermPair("service", Polarity("negative"))),
    (),
    None,
    Domain.RESTAURANT,
    Source.SEMEVAL14,
)
SEQS = encode_training(EX, TaskMode.JOINT_TERM)
PROMPT = encode_prompt(EX, TaskMode.JOINT_TERM)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(max_steps=0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=None, max_steps=None)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1)
    with pytest.raises(ValueError):
        TrainConfig(selection="median")
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"steps": 3})
    assert TrainConfig(epochs=2, max_steps=None, batch_size=4).total_steps(10) == 6


def test_loss_trace_steps_strictly_increase(tmp_path):
    t = LossTrace()
    t.log(1, 2.0, 1.5)
    t.log(3, 1.0, dev_accuracy=0.5)
    with pytest.raises(ValueError):
        t.log(3, 0.5)
    t.to_csv(tmp_path / "t.csv")
    assert LossTrace.from_csv(tmp_path / "t.csv") == t


# --- mock --------------------------------------------------------------------------


def test_mock_loss_non_increasing_on_one_sequence():
    _, trace = fit_generative(MockBackend(), SEQS[:1], TrainConfig(max_steps=10, learning_rate=1.0))
    losses = trace.lm_losses
    assert len(losses) == 10
    assert all(b <= a for a, b in zip(losses, losses[1:]))


def test_mock_label_position_loss_logged_at_same_steps():
    _, trace = fit_generative(MockBackend(), SEQS, TrainConfig(max_steps=5, learning_rate=0.5, label_position_loss=True))
    for r in trace:
        assert math.isfinite(r.lm_loss) and math.isfinite(r.label_position_loss)


def test_mock_is_deterministic():
    cfg = TrainConfig(max_steps=7, learning_rate=0.3, batch_size=1, seed=4)
    seqs = encode_training(EX, TaskMode.JOINT_TERM, split=True)
    _, a = fit_generative(MockBackend(seed=4), seqs, cfg)
    _, b = fit_generative(MockBackend(seed=4), seqs, cfg)
    assert a == b


def test_mock_generation_contract():
    m, _ = fit_generative(MockBackend(), SEQS, TrainConfig(max_steps=1))
    out = generate(m, PROMPT, 50)
    assert out == " <|term|> food positive , service negative <|endofterm|>"
    assert PROMPT.text not in out
    assert generate(m, PROMPT, 0) == ""
    assert generate(m, PROMPT, 2) == " <|term|> food"


def test_mock_scripted_continuation_and_stop():
    m = MockBackend(script={PROMPT.text: " <|term|> food positive <|endofterm|> trailing text"})
    assert generate(m, PROMPT, 50) == " <|term|> food positive <|endofterm|>"
    echo = MockBackend(script=lambda p: " canned")
    assert generate(echo, PROMPT, 50) == " canned"


def test_mock_errors():
    with pytest.raises(EmptyTrainingSet):
        fit_generative(MockBackend(), [], TrainConfig())
    with pytest.raises(SequenceTooLong):
        fit_generative(MockBackend(), SEQS, TrainConfig(max_seq_len=5))
    with pytest.raises(PromptTooLong):
        generate(MockBackend(max_positions=3), PROMPT, 5)
    with pytest.raises(ValueError):
        generate(MockBackend(), SEQS[0], 5)


def test_mock_classifier():
    m = MockBackend()
    m.attach_head(4)
    assert 0 <= predict_class(m, "anything") < 4
    fit_classifier(m, [(PROMPT.text, 2)], 4, TrainConfig(max_steps=50, learning_rate=1.0))
    assert predict_class(m, PROMPT.text) == 2
    assert snapshot_layers(m)["head"].size == 4 * (m.feature_size + 1)
    with pytest.raises(ValueError):
        fit_classifier(m, [(PROMPT.text, 0)], 1, TrainConfig())


def test_mock_snapshots():
    m = MockBackend()
    a, b = snapshot_layers(m), snapshot_layers(m)
    assert list(a) == ["embedding", "block_0", "block_1", "head"]
    assert all(np.array_equal(a[k], b[k]) for k in a)
    fit_generative(m, SEQS, TrainConfig(max_steps=1, learning_rate=0.5))
    c = snapshot_layers(m)
    assert set(c) == set(a)
    assert any(not np.array_equal(a[k], c[k]) for k in a)


def test_mock_snapshot_sink_collects_steps():
    sink: list = []
    fit_generative(MockBackend(), SEQS, TrainConfig(max_steps=4, snapshot_interval=2), snapshots=sink)
    assert [s for s, _ in sink] == [0, 2, 4]


def test_mock_best_dev_selection_restores_best_state():
    scores = iter([0.9, 0.1])
    m = MockBackend()
    best = {}

    def eval_fn(model):
        acc = next(scores)
        best.setdefault(acc, model.embedding.copy())
        return acc

    fit_generative(m, SEQS, TrainConfig(max_steps=4, eval_interval=2, selection="best_dev", learning_rate=0.5), eval_fn=eval_fn)
    assert np.array_equal(m.embedding, best[0.9])
    assert [r.dev_accuracy for r in m.last_trace] == [None, 0.9, None, 0.1]


def test_mock_checkpoint_round_trip(tmp_path):
    m, _ = fit_generative(MockBackend(), SEQS, TrainConfig(max_steps=3, learning_rate=0.5))
    save_checkpoint(m, tmp_path / "ck", {"note": "x"})
    assert {p.name for p in (tmp_path / "ck").iterdir()} >= {"config.json", "manifest.json", "weights.npz"}
    back = load_backend(tmp_path / "ck")
    assert generate(back, PROMPT, 50) == generate(m, PROMPT, 50)
    assert all(np.array_equal(v, snapshot_layers(back)[k]) for k, v in snapshot_layers(m).items())


def test_get_backend_rejects_unknown():
    with pytest.raises(ValueError):
        get_backend("tpu:giant")


# --- transformers ------------------------------------------------------------------


@pytest.fixture(scope="module")
def tiny_hf():
    torch = pytest.importorskip("torch")
    pytest.importorskip("transformers")
    tokenizers = pytest.importorskip("tokenizers")
    from transformers import GPT2Config, GPT2LMHeadModel, PreTrainedTokenizerFast

    from genabsa.lm_backend.hf import TransformersBackend

    tok = tokenizers.Tokenizer(tokenizers.models.BPE())
    tok.pre_tokenizer = tokenizers.pre_tokenizers.ByteLevel(add_prefix_space=False)
    tok.decoder = tokenizers.decoders.ByteLevel()
    trainer = tokenizers.trainers.BpeTrainer(
        vocab_size=300, special_tokens=["<|endoftext|>"], initial_alphabet=tokenizers.pre_tokenizers.ByteLevel.alphabet()
    )
    tok.train_from_iterator([s.text for s in SEQS] * 10, trainer)
    fast = PreTrainedTokenizerFast(tokenizer_object=tok, eos_token="<|endoftext|>", pad_token="<|endoftext|>")

    def make(seed: int = 0):
        torch.manual_seed(seed)
        cfg = GPT2Config(
            vocab_size=len(fast), n_positions=96, n_embd=32, n_layer=2, n_head=2,
            bos_token_id=fast.eos_token_id, eos_token_id=fast.eos_token_id,
        )
        return TransformersBackend(GPT2LMHeadModel(cfg), fast, "tiny")

    return make


def test_hf_loss_decreases_and_probe_logged(tiny_hf):
    m, trace = fit_generative(tiny_hf(), SEQS, TrainConfig(max_steps=30, learning_rate=3e-3, label_position_loss=True))
    assert trace.lm_losses[-1] < trace.lm_losses[0]
    assert all(math.isfinite(r.label_position_loss) for r in trace)


def test_hf_deterministic(tiny_hf):
    cfg = TrainConfig(max_steps=5, learning_rate=1e-3, seed=1)
    _, a = fit_generative(tiny_hf(), SEQS, cfg)
    _, b = fit_generative(tiny_hf(), SEQS, cfg)
    assert a == b


def test_hf_generation_contract(tiny_hf):
    m, _ = fit_generative(tiny_hf(), SEQS, TrainConfig(max_steps=80, learning_rate=3e-3))
    out = generate(m, PROMPT, 60)
    assert out == " <|term|> food positive , service negative <|endofterm|>"
    assert generate(m, PROMPT, 0) == ""
    short = generate(m, PROMPT, 3)
    assert len(m.tokenizer(short, add_special_tokens=False)["input_ids"]) <= 3


def test_hf_errors(tiny_hf):
    m = tiny_hf()
    with pytest.raises(SequenceTooLong):
        fit_generative(m, SEQS, TrainConfig(max_seq_len=8))
    long_ex = Example("L", "word " * 200, (), (), None, Domain.RESTAURANT, Source.SEMEVAL14)
    with pytest.raises(PromptTooLong):
        generate(m, encode_prompt(long_ex, TaskMode.JOINT_TERM), 5)
    with pytest.raises(EmptyTrainingSet):
        fit_generative(m, [], TrainConfig())


def test_hf_snapshots_and_classifier(tiny_hf, tmp_path):
    m = tiny_hf()
    a = snapshot_layers(m)
    assert list(a) == ["embedding", "block_0", "block_1", "head"]
    b = snapshot_layers(m)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    fit_classifier(m, [(PROMPT.text, 3), ("<|review|> bad <|endofreview|>", 1)], 4, TrainConfig(max_steps=40, learning_rate=3e-3, batch_size=2))
    assert m.head.out_features == 4
    assert predict_class(m, PROMPT.text) == 3
    c = snapshot_layers(m)
    assert set(c) == set(a)
    assert any(not np.array_equal(a[k], c[k]) for k in ("embedding", "block_0", "block_1"))
    save_checkpoint(m, tmp_path / "ck")
    assert predict_class(load_backend(tmp_path / "ck"), PROMPT.text) == 3
