import logging

import numpy as np
import pytest
from hypothesis import given, strategies as st

from answer_select.embeddings import (
    PAD,
    UNK,
    EmbeddingTable,
    load_embeddings,
    shape_sequence,
    tokenize,
)
from answer_select.errors import ParseError


@pytest.fixture
def two_line_file(tmp_path):
    path = tmp_path / "vec.txt"
    path.write_text("a 1.0 2.0\nb 3.0 4.0\n", encoding="utf-8")
    return path


def test_load_two_lines(two_line_file):
    table = load_embeddings(two_line_file, 2)
    assert len(table) == 4
    assert table.tokens[:2] == ["<pad>", "<unk>"]
    np.testing.assert_array_equal(table.vectors[table.lookup("a")], [1.0, 2.0])
    np.testing.assert_array_equal(table.vectors[PAD], [0.0, 0.0])
    np.testing.assert_array_equal(table.vectors[UNK], [2.0, 3.0])


def test_dimension_mismatch_names_line(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("c 1.0\n", encoding="utf-8")
    with pytest.raises(ParseError) as err:
        load_embeddings(path, 2)
    assert err.value.line == 1
    assert ":1:" in str(err.value)


def test_duplicate_keeps_first(tmp_path, caplog):
    path = tmp_path / "dup.txt"
    path.write_text("a 1 1\nb 2 2\na 9 9\n", encoding="utf-8")
    with caplog.at_level(logging.WARNING):
        table = load_embeddings(path, 2)
    assert len(table) == 4
    np.testing.assert_array_equal(table.vectors[table.lookup("a")], [1.0, 1.0])
    assert "duplicate" in caplog.text


def test_load_is_idempotent(two_line_file):
    t1, t2 = load_embeddings(two_line_file, 2), load_embeddings(two_line_file, 2)
    assert t1.tokens == t2.tokens
    assert t1.vectors.tobytes() == t2.vectors.tobytes()


def test_keep_filters_rows_but_unk_uses_all(two_line_file):
    table = load_embeddings(two_line_file, 2, keep={"b"})
    assert table.tokens == ["<pad>", "<unk>", "b"]
    np.testing.assert_array_equal(table.vectors[UNK], [2.0, 3.0])


def test_tokenize_examples():
    assert tokenize("When did Amtrak begin operations?") == ["when", "did", "amtrak", "begin", "operations"]
    assert tokenize("") == []
    assert tokenize("U.S.-based, 1971.") == ["u.s.-based", "1971"]
    assert tokenize("  ... -- !") == []


@given(st.text())
def test_tokenize_rule(text):
    for tok in tokenize(text):
        assert tok
        assert tok == tok.lower()
        assert not any(ch.isspace() for ch in tok)


def _table():
    return EmbeddingTable.from_rows([("a", np.array([1.0, 0.0])), ("b", np.array([0.0, 1.0]))])


def test_shape_pads_tail():
    table = _table()
    seq = shape_sequence(["a", "b"], 4, table)
    assert list(seq.ids) == [table.lookup("a"), table.lookup("b"), PAD, PAD]
    assert seq.length == 2


def test_shape_truncates_tail():
    table = _table()
    tokens = ["a"] * 40 + ["b"] * 10
    seq = shape_sequence(tokens, 40, table)
    assert len(seq) == 40
    assert all(i == table.lookup("a") for i in seq.ids)
    assert seq.length == 50


def test_unknown_token_is_unk():
    assert shape_sequence(["zyzzyva"], 3, _table()).ids[0] == UNK


@given(st.lists(st.sampled_from(["a", "b"]), min_size=1, max_size=9))
def test_round_trip_lookup(tokens):
    table = _table()
    seq = shape_sequence(tokens, 10, table)
    raw = table.vectors[[table.lookup(t) for t in tokens]]
    shaped = table.vectors[seq.ids]
    np.testing.assert_array_equal(shaped[: len(tokens)], raw)
    np.testing.assert_array_equal(shaped[len(tokens):], 0.0)


def test_vocab_hash_tracks_tokens():
    assert _table().vocab_hash() == _table().vocab_hash()
    other = EmbeddingTable.from_rows([("b", np.array([0.0, 1.0])), ("a", np.array([1.0, 0.0]))])
    assert other.vocab_hash() != _table().vocab_hash()
