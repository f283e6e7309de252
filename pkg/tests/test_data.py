import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from answer_select.data import (
    Candidate,
    DatasetSplit,
    IdfTable,
    Question,
    build_idf,
    build_instances,
    convert_xml,
    filter_degenerate,
    make_batches,
    overlap_features,
    parse_split,
    synthetic_split,
    write_split,
)
from answer_select.embeddings import EmbeddingTable
from answer_select.errors import ConfigError, ParseError

TSV = """# comment line
q1\t1\tWhen did Amtrak begin operations?\tAmtrak began in 1971.
q1\t0\tWhen did Amtrak begin operations?\tAmtrak has not turned a profit.
q2\t1\tWho wrote it?\tShe wrote it.
q2\t1\tWho wrote it?\tIt was written by her.
q3\t0\tWhere?\tNowhere.
"""


@pytest.fixture
def tsv(tmp_path):
    path = tmp_path / "dev.tsv"
    path.write_text(TSV, encoding="utf-8")
    return path


def test_parse_split(tsv):
    split = parse_split(tsv, "dev")
    assert [q.qid for q in split.questions] == ["q1", "q2", "q3"]
    assert split.stats() == (3, 5, pytest.approx(60.0))
    assert split.questions[0].candidates[1].docid == "q1-0001"


def test_parse_empty_file(tmp_path):
    path = tmp_path / "empty.tsv"
    path.write_text("", encoding="utf-8")
    split = parse_split(path)
    assert split.stats() == (0, 0, 0.0)


@pytest.mark.parametrize(
    "row,fragment",
    [("q1\t1\tonly three", "columns"), ("q1\t2\tq\ta", "label"), ("q1\tyes\tq\ta", "label")],
)
def test_parse_errors_carry_line_numbers(tmp_path, row, fragment):
    path = tmp_path / "bad.tsv"
    path.write_text("q0\t0\tq\ta\n" + row + "\n", encoding="utf-8")
    with pytest.raises(ParseError, match=fragment) as err:
        parse_split(path)
    assert err.value.line == 2


def test_write_then_parse_round_trip(tsv, tmp_path):
    split = parse_split(tsv)
    out = tmp_path / "copy.tsv"
    write_split(split, out)
    again = parse_split(out)
    assert [(q.qid, q.text, [(c.answer, c.label) for c in q.candidates]) for q in again.questions] == [
        (q.qid, q.text, [(c.answer, c.label) for c in q.candidates]) for q in split.questions
    ]


def _split(*label_lists):
    split = DatasetSplit("s")
    for i, labels in enumerate(label_lists):
        q = Question(f"q{i}", "x")
        q.candidates = [Candidate(f"q{i}-{j}", "y", l) for j, l in enumerate(labels)]
        split.questions.append(q)
    return split


def test_filter_degenerate():
    kept = filter_degenerate(_split([1, 1], [0, 1], [0, 0], [1, 0, 0]))
    assert [q.qid for q in kept.questions] == ["q1", "q3"]


def test_filter_is_idempotent(tsv):
    once = filter_degenerate(parse_split(tsv))
    twice = filter_degenerate(once)
    assert [q.qid for q in twice.questions] == [q.qid for q in once.questions] == ["q1"]


def test_idf_hand_trace():
    idf = build_idf([["a", "b"], ["a", "c"], ["a", "b", "d"]])
    assert idf.n_docs == 3
    assert idf["a"] == 0.0
    assert idf["b"] == pytest.approx(math.log(3 / 2))
    assert idf["c"] == idf["d"] == pytest.approx(math.log(3))
    assert idf["never-seen"] == pytest.approx(math.log(3))


def test_idf_single_document_frequency():
    docs = [["rare"]] + [["common"]] * 9
    assert build_idf(docs)["rare"] == pytest.approx(2.302585, abs=1e-6)


def test_idf_from_split_uses_answers(tsv):
    idf = build_idf(parse_split(tsv))
    assert idf.n_docs == 5
    assert idf["amtrak"] == pytest.approx(math.log(5 / 2))


def test_idf_empty_corpus():
    with pytest.raises(ConfigError):
        build_idf([])


def test_overlap_examples():
    uniform = IdfTable({t: 1.0 for t in ["when", "did", "amtrak", "profit", "x", "y"]}, 6)
    np.testing.assert_allclose(overlap_features(["x", "y"], ["y", "x"], uniform), [1.0, 1.0])
    np.testing.assert_allclose(overlap_features(["x"], ["y"], uniform), [0.0, 0.0])
    np.testing.assert_allclose(
        overlap_features(["when", "did", "amtrak"], ["amtrak", "profit"], uniform), [1 / 3, 1 / 3], atol=1e-15
    )
    np.testing.assert_allclose(overlap_features([], ["x"], uniform), [0.0, 0.0])


def test_overlap_is_question_normalized():
    idf = IdfTable({"a": 1.0, "b": 2.0, "c": 3.0}, 3)
    # formula as written: |q & a| / |q|, not symmetric in general
    np.testing.assert_allclose(overlap_features(["a", "b"], ["a", "b", "c"], idf), [1.0, 1.0])
    np.testing.assert_allclose(overlap_features(["a", "b", "c"], ["a", "b"], idf), [2 / 3, 3 / 6])


@given(
    st.lists(st.sampled_from("abcdef"), max_size=8),
    st.lists(st.sampled_from("abcdefgh"), max_size=8),
)
def test_overlap_ranges(q, a):
    idf = build_idf([["a", "b"], ["c"], ["a", "d", "e"], ["f"]])
    overlap, weighted = overlap_features(q, a, idf)
    assert 0.0 <= overlap <= 1.0
    assert weighted >= 0.0


def test_make_batches_rules():
    items = list(range(10))
    assert [len(b) for b in make_batches(items, 4, seed=1, train=True)] == [4, 4]
    assert [len(b) for b in make_batches(items, 4, train=False)] == [4, 4, 2]
    assert make_batches(items, 4, train=False)[2] == [8, 9]
    assert make_batches(items, 4, seed=5) == make_batches(items, 4, seed=5)
    with pytest.raises(ConfigError):
        make_batches(items, 1)


def test_convert_xml(tmp_path):
    xml = (
        "<QApairs id='1.1'>\n<question>\nWho\twrote\tit\t?\nWP\tVBD\tPRP\t.\n</question>\n"
        "<positive>\nShe\twrote\tit\t.\nPRP\tVBD\tPRP\t.\n</positive>\n"
        "<negative>\nNobody\tknows\t.\nNN\tVBZ\t.\n</negative>\n</QApairs>\n"
        "<QApairs id='1.2'>\n<question>\nWhere\t?\nWRB\t.\n</question>\n</QApairs>\n"
    )
    src = tmp_path / "DEV.xml"
    src.write_text(xml, encoding="utf-8")
    convert_xml(src, tmp_path / "dev.tsv")
    split = parse_split(tmp_path / "dev.tsv")
    assert split.stats() == (1, 2, 50.0)
    assert split.questions[0].text == "Who wrote it ?"
    assert [c.label for c in split.questions[0].candidates] == [1, 0]


def test_build_instances_features_and_shapes():
    split = synthetic_split(n_questions=3, n_candidates=3, seed=2)
    vocab = {t for q in split.questions for t in q.tokens}
    table = EmbeddingTable.random(vocab, 4)
    instances = build_instances(split, table, build_idf(split), 5, 7)
    assert len(instances) == 9
    assert all(i.question.ids.shape == (5,) and i.answer.ids.shape == (7,) for i in instances)
    assert all(0.0 <= i.features[0] <= 1.0 and i.features[1] >= 0 for i in instances)


def test_length_coverage_warning(caplog):
    split = synthetic_split(n_questions=2, n_candidates=2, sentence_len=6, seed=0)
    table = EmbeddingTable.random({"w1"}, 3)
    build_instances(split, table, build_idf(split), 3, 40)
    assert "fit in 3 tokens" in caplog.text


def test_synthetic_split_is_never_degenerate():
    split = synthetic_split(n_questions=20, n_candidates=4, seed=9)
    assert len(filter_degenerate(split).questions) == 20


def test_subsample_is_seeded():
    split = synthetic_split(n_questions=30, n_candidates=2, seed=1)
    a, b = split.subsample(10, seed=4), split.subsample(10, seed=4)
    assert [q.qid for q in a.questions] == [q.qid for q in b.questions]
    assert len(a.questions) == 10
