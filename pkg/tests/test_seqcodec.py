from __future__ import annotations

import pytest

from genabsa.core_types import (
    ABSA_LABELS,
    SST2_LABELS,
    SST5_LABELS,
    CategoryPair,
    Domain,
    Example,
    Polarity,
    PolaritySet,
    Source,
    TaskMode,
    TermPair,
)
from genabsa.errors import IncompatibleMode, MarkerInText, MissingTarget, UnexpectedTarget, UnknownCategory
from genabsa.seqcodec import (
    decode_pairs,
    encode_prompt,
    encode_training,
    prompts_for,
    render_category,
    split_official_category,
    unrender_category,
)

P, N = Polarity("positive"), Polarity("negative")

SAILED = Example(
    "s1",
    "once we sailed, the top-notch food and live entertainment sold us on a unforgettable evening.",
    (TermPair("food", P), TermPair("live entertainment", P)),
    (),
    None,
    Domain.RESTAURANT,
    Source.SEMEVAL14,
)
SAILED_TEXT = (
    "<|review|> once we sailed, the top-notch food and live entertainment sold us on a unforgettable evening. "
    "<|endofreview|> <|term|> food positive , live entertainment positive <|endofterm|>"
)
SERVICE = Example(
    "s2",
    "the service was attentive without being overbearing and each dish we tried was wonderful from the spring rolls to the cod with pineapple tempura.",
    (TermPair("service", P), TermPair("dish", P), TermPair("spring rolls", P), TermPair("cod with pineapple tempura", P)),
    (CategoryPair("food", P), CategoryPair("service", P)),
    None,
    Domain.RESTAURANT,
    Source.SEMEVAL14,
)


def test_joint_term_training_and_prompt():
    (seq,) = encode_training(SAILED, TaskMode.JOINT_TERM)
    assert seq.text == SAILED_TEXT
    prompt = encode_prompt(SAILED, TaskMode.JOINT_TERM)
    assert prompt.text == SAILED_TEXT.split(" <|term|>")[0]
    assert prompt.stop_string == "<|endofterm|>"


def test_single_term_prompt_ends_with_target():
    prompt = encode_prompt(SAILED, TaskMode.SINGLE_TERM, "food")
    assert prompt.text.endswith("<|endofreview|> <|term|> food")
    assert prompt.target == "food"


def test_multi_training_sequence():
    (seq,) = encode_training(SERVICE, TaskMode.MULTI)
    assert seq.text.endswith(
        "<|endofreview|> <|term|> service positive , dish positive , spring rolls positive , "
        "cod with pineapple tempura positive <|endofterm|> <|category|> food positive , service positive <|endofcategory|>"
    )


def test_sentence_label_sequences():
    sst2 = Example("m1", "does n't try to surprise us", (), (), P, Domain.MOVIE, Source.SST2)
    (seq,) = encode_training(sst2, TaskMode.SENTENCE_LABEL)
    assert seq.text == "<|review|> does n't try to surprise us <|endofreview|> <|sentiment|> positive <|endofsentiment|>"
    sst5 = Example("m2", "it 's a lovely film .", (), (), Polarity("somewhat positive"), Domain.MOVIE, Source.SST5)
    (seq,) = encode_training(sst5, TaskMode.SENTENCE_LABEL)
    assert seq.text.endswith("<|sentiment|> somewhat positive <|endofsentiment|>")
    oos = Example("o1", "how would you say fly in italian", (), (), Polarity("translate"), Domain.DIALOG, Source.OOS)
    (seq,) = encode_training(oos, TaskMode.SENTENCE_LABEL)
    assert seq.text == "<|user|> how would you say fly in italian <|endofuser|> <|intent|> translate <|endofintent|>"
    assert encode_prompt(oos, TaskMode.SENTENCE_LABEL).text.endswith("<|endofuser|> <|intent|>")


def test_label_spans_point_at_labels():
    (seq,) = encode_training(SERVICE, TaskMode.MULTI)
    assert [seq.text[a:b] for a, b in seq.label_spans] == ["positive"] * 6


def test_split_format_one_pair_per_sequence():
    seqs = encode_training(SAILED, TaskMode.JOINT_TERM, split=True)
    assert [s.text.split("<|term|> ")[1] for s in seqs] == [
        "food positive <|endofterm|>",
        "live entertainment positive <|endofterm|>",
    ]


def test_multi_split_emits_single_segment_sequences():
    seqs = encode_training(SERVICE, TaskMode.MULTI, split=True)
    assert len(seqs) == 6
    assert sum("<|category|>" in s.text for s in seqs) == 2


def test_empty_pairs():
    ex = Example("e", "we went there", (), (), None, Domain.RESTAURANT, Source.SEMEVAL14)
    assert encode_training(ex, TaskMode.SINGLE_TERM) == []
    (seq,) = encode_training(ex, TaskMode.JOINT_TERM)
    assert seq.text.endswith("<|term|> <|endofterm|>")
    rec = decode_pairs(" <|term|> <|endofterm|>", TaskMode.JOINT_TERM, ABSA_LABELS)
    assert rec.pairs == () and not rec.parse_failures and not rec.truncated


def test_prompts_for_single_modes_one_per_gold_target():
    assert [p.target for p in prompts_for(SERVICE, TaskMode.SINGLE_TERM)] == [
        "service", "dish", "spring rolls", "cod with pineapple tempura",
    ]
    assert len(prompts_for(SERVICE, TaskMode.JOINT_TERM)) == 1


def test_target_rules():
    with pytest.raises(MissingTarget):
        encode_prompt(SAILED, TaskMode.SINGLE_TERM)
    with pytest.raises(UnexpectedTarget):
        encode_prompt(SAILED, TaskMode.JOINT_TERM, "food")


def test_incompatible_modes():
    laptop = Example("l", "battery dies", (TermPair("battery", N),), (), None, Domain.LAPTOP, Source.SEMEVAL14)
    with pytest.raises(IncompatibleMode):
        encode_training(laptop, TaskMode.MULTI)
    with pytest.raises(IncompatibleMode):
        encode_training(SAILED, TaskMode.SENTENCE_LABEL)


def test_markers_and_separator_rejected_in_items():
    bad = Example("b", "x", (TermPair("a <|term|>", P),), (), None, Domain.RESTAURANT, Source.SEMEVAL14)
    with pytest.raises(MarkerInText):
        encode_training(bad, TaskMode.JOINT_TERM)
    bad = Example("b", "x", (TermPair("salt , pepper", P),), (), None, Domain.RESTAURANT, Source.SEMEVAL14)
    with pytest.raises(MarkerInText):
        encode_training(bad, TaskMode.JOINT_TERM)


def test_decode_multi_word_labels_prefer_longest():
    labels = PolaritySet(("positive", "somewhat positive", "negative"), "x")
    rec = decode_pairs(" <|term|> acting somewhat positive , plot negative <|endofterm|>", TaskMode.JOINT_TERM, labels)
    assert rec.pairs == (("acting", "somewhat positive"), ("plot", "negative"))
    rec = decode_pairs(" somewhat positive <|endofsentiment|>", TaskMode.SENTENCE_LABEL, SST5_LABELS)
    assert rec.label == "somewhat positive"


def test_decode_truncation_and_failures():
    rec = decode_pairs(" <|term|> food positive , service", TaskMode.JOINT_TERM, ABSA_LABELS)
    assert rec.truncated
    assert rec.pairs == (("food", "positive"),)
    assert rec.parse_failures == ("service",)


def test_decode_ignores_text_after_stop():
    rec = decode_pairs(" <|term|> food positive <|endofterm|> junk negative", TaskMode.JOINT_TERM, ABSA_LABELS)
    assert rec.pairs == (("food", "positive"),) and not rec.truncated


def test_decode_single_first_label():
    rec = decode_pairs(" negative <|endofterm|>", TaskMode.SINGLE_TERM, ABSA_LABELS, target="Food")
    assert rec.label == "negative" and rec.pairs == (("food", "negative"),)
    rec = decode_pairs(" tasty <|endofterm|>", TaskMode.SINGLE_TERM, ABSA_LABELS, target="food")
    assert rec.label is None and rec.parse_failures


def test_decode_sentence_label_sst2():
    assert decode_pairs(" negative <|endofsentiment|>", TaskMode.SENTENCE_LABEL, SST2_LABELS).label == "negative"


def test_category_rendering():
    assert render_category("FOOD", "STYLE_OPTIONS") == "food style options"
    assert render_category("anecdotes/miscellaneous") == "anecdotes miscellaneous"
    assert split_official_category("FOOD#QUALITY", "semeval16", "restaurant") == ("FOOD", "QUALITY")
    assert unrender_category("food quality", "semeval16", "restaurant") == "FOOD#QUALITY"
    with pytest.raises(UnknownCategory):
        split_official_category("FOOD#TASTE", "semeval16", "restaurant")
