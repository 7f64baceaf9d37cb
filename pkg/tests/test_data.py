"""Corpus IO schema enforcement, stats arithmetic, model encoding."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dgt.data import (
    CorpusFormatError,
    Example,
    column_stats,
    compute_stats,
    encode_corpus,
    load_corpus,
    load_predictions,
    write_corpus,
    write_predictions,
)
from dgt.tokenizer import BYTE_OFFSET, EOS_ID, Vocabulary


def write_text(path, text):
    path.write_text(text, encoding="utf-8")
    return path


# -- reading -----------------------------------------------------------------------


def test_load_labeled_corpus(tmp_path):
    path = write_text(tmp_path / "c.csv",
                      "index,district,contents,ipa\n1,sylhet,ka,kʰa\n2,dhaka,ka,xa\n")
    examples = load_corpus(path, expect_targets=True)
    assert examples == [
        Example(1, "sylhet", "ka", "kʰa"),
        Example(2, "dhaka", "ka", "xa"),
    ]


def test_load_unlabeled_corpus(tmp_path):
    path = write_text(tmp_path / "t.csv", "index,district,contents\n7,sylhet,ba\n")
    examples = load_corpus(path, expect_targets=False)
    assert examples == [Example(7, "sylhet", "ba", None)]


def test_quoted_fields_round_trip(tmp_path):
    fancy = [
        Example(0, "d1", 'said "hi", twice', "a b"),
        Example(1, "d2", "line\nbreak", "c,d"),
    ]
    path = tmp_path / "fancy.csv"
    write_corpus(path, fancy)
    assert load_corpus(path, expect_targets=True) == fancy


def test_bom_is_tolerated(tmp_path):
    path = tmp_path / "bom.csv"
    path.write_bytes("index,district,contents\n1,d1,ka\n".encode("utf-8-sig"))
    assert load_corpus(path, expect_targets=False)[0].contents == "ka"


@pytest.mark.parametrize(
    "body,fragment",
    [
        ("", "empty file"),
        ("index,district\n", "header"),
        ("index,district,contents,ipa\n", None),  # header-only is fine, no rows
        ("index,district,contents,ipa\nx,d1,ka,ka\n", "row 2"),
        ("index,district,contents,ipa\n1,d1,ka,ka\n1,d2,ba,ba\n", "duplicate index 1"),
        ("index,district,contents,ipa\n1,,ka,ka\n", "district is empty"),
        ("index,district,contents,ipa\n1,d1,,ka\n", "contents is empty"),
        ("index,district,contents,ipa\n1,d1,ka,\n", "ipa is empty"),
        ("index,district,contents,ipa\n1,d1,ka\n", "row 2"),
    ],
)
def test_labeled_schema_violations(tmp_path, body, fragment):
    path = write_text(tmp_path / "bad.csv", body)
    if fragment is None:
        assert load_corpus(path, expect_targets=True) == []
        return
    with pytest.raises(CorpusFormatError, match=fragment):
        load_corpus(path, expect_targets=True)


def test_unlabeled_loader_rejects_labeled_header(tmp_path):
    path = write_text(tmp_path / "c.csv", "index,district,contents,ipa\n1,d1,ka,ka\n")
    with pytest.raises(CorpusFormatError, match="header"):
        load_corpus(path, expect_targets=False)


def test_missing_file(tmp_path):
    with pytest.raises(CorpusFormatError, match="does not exist"):
        load_corpus(tmp_path / "absent.csv", expect_targets=True)


def test_error_names_the_offending_row(tmp_path):
    rows = "index,district,contents,ipa\n" + "".join(
        f"{i},d1,ka,ka\n" for i in range(5)
    ) + "notanint,d1,ka,ka\n"
    path = write_text(tmp_path / "c.csv", rows)
    with pytest.raises(CorpusFormatError, match="row 7"):
        load_corpus(path, expect_targets=True)


# -- writing -----------------------------------------------------------------------


def test_write_rejects_mixed_labeling(tmp_path):
    mixed = [Example(0, "d1", "ka", "ka"), Example(1, "d1", "ba", None)]
    with pytest.raises(CorpusFormatError, match="mixed"):
        write_corpus(tmp_path / "m.csv", mixed)


def test_write_unlabeled_omits_target_column(tmp_path):
    path = tmp_path / "u.csv"
    write_corpus(path, [Example(0, "d1", "ka", None)])
    assert path.read_text(encoding="utf-8").splitlines()[0] == "index,district,contents"


def test_predictions_round_trip(tmp_path):
    path = tmp_path / "p.csv"
    write_predictions(path, [(3, "kʰa"), (1, "xa")])
    assert load_predictions(path) == {3: "kʰa", 1: "xa"}


def test_predictions_reject_duplicates(tmp_path):
    path = write_text(tmp_path / "p.csv", "index,ipa\n1,a\n1,b\n")
    with pytest.raises(CorpusFormatError, match="duplicate"):
        load_predictions(path)


def test_predictions_reject_wrong_header(tmp_path):
    path = write_text(tmp_path / "p.csv", "id,ipa\n1,a\n")
    with pytest.raises(CorpusFormatError, match="header"):
        load_predictions(path)


# -- statistics --------------------------------------------------------------------


def test_column_stats_by_hand():
    stats = column_stats(["abc", "a"])
    assert stats.max_len == 3
    assert stats.min_len == 1
    assert stats.mean_len == 2.0
    assert stats.median_len == 2.0
    assert stats.unique_word_count == 2


def test_column_stats_counts_word_types_not_tokens():
    stats = column_stats(["the cat the", "cat sat"])
    assert stats.unique_word_count == 3  # the, cat, sat


def test_column_stats_lengths_are_codepoints():
    # a 3-byte Bengali letter and a 2-codepoint aspirate cluster
    stats = column_stats(["ক", "kʰ"])
    assert stats.max_len == 2 and stats.min_len == 1


def test_oov_arithmetic():
    train = [Example(0, "d", "a b c", "x")]
    test = [Example(1, "d", "b c d e", None)]
    stats = compute_stats(train, test)
    assert stats.oov_count == 2
    assert stats.oov_rate == 0.5


def test_oov_zero_when_test_is_subset():
    train = [Example(0, "d", "a b c", "x")]
    test = [Example(1, "d", "b c", None)]
    stats = compute_stats(train, test)
    assert stats.oov_count == 0
    assert stats.oov_rate == 0.0


def test_stats_without_test_set():
    stats = compute_stats([Example(0, "d", "ka", "ka")])
    assert stats.test_contents is None
    assert stats.oov_count is None and stats.oov_rate is None


def test_stats_without_targets():
    stats = compute_stats([Example(0, "d", "ka", None)])
    assert stats.train_ipa is None


@settings(max_examples=100)
@given(st.lists(st.text(min_size=1, max_size=12), min_size=1, max_size=30))
def test_stats_invariants(texts):
    stats = column_stats(texts)
    assert stats.min_len <= stats.median_len <= stats.max_len
    assert stats.min_len <= stats.mean_len <= stats.max_len
    assert stats.unique_word_count >= 0


@settings(max_examples=50)
@given(
    st.lists(st.text(alphabet="ab ", min_size=1, max_size=8), min_size=2, max_size=20),
    st.randoms(use_true_random=False),
)
def test_stats_are_order_invariant(texts, rnd):
    shuffled = list(texts)
    rnd.shuffle(shuffled)
    assert column_stats(texts) == column_stats(shuffled)


def test_oov_rate_bounds():
    train = [Example(0, "d", "p q", "x")]
    test = [Example(1, "d", "r s t", None)]
    stats = compute_stats(train, test)
    assert 0.0 <= stats.oov_rate <= 1.0
    assert stats.oov_rate == 1.0  # fully disjoint


# -- encoding for the model ---------------------------------------------------------


def test_encode_corpus_marks_source_only():
    vocab = Vocabulary().register_districts(["d1"])
    pairs = encode_corpus([Example(0, "d1", "ka", "xa")], vocab)
    (source, target), = pairs
    assert source[0] == vocab.district_id("d1")
    assert source[1:] == [ord("k") + BYTE_OFFSET, ord("a") + BYTE_OFFSET, EOS_ID]
    assert target == [ord("x") + BYTE_OFFSET, ord("a") + BYTE_OFFSET, EOS_ID]
    assert target[0] < 259  # never a district marker


def test_encode_corpus_blind_mode_drops_marker():
    vocab = Vocabulary().register_districts(["d1"])
    example = Example(0, "d1", "ka", "xa")
    (marked, _), = encode_corpus([example], vocab, district_tokens=True)
    (blind, _), = encode_corpus([example], vocab, district_tokens=False)
    assert blind == marked[1:]


def test_encode_corpus_requires_targets():
    vocab = Vocabulary().register_districts(["d1"])
    with pytest.raises(CorpusFormatError, match="target"):
        encode_corpus([Example(0, "d1", "ka", None)], vocab)
