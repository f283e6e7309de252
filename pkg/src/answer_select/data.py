"""TREC-QA style answer-selection data: parsing, filtering, features, batches.

Splits are read from a tab-separated interchange file, one candidate per row::

    qid <TAB> label(0|1) <TAB> question text <TAB> answer text

Rows are grouped by qid and lines starting with ``#`` are comments.  See
``convert_xml`` for turning the distributed XML files into this format.
"""

from __future__ import annotations

import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .embeddings import EmbeddingTable, TokenSequence, shape_sequence, tokenize
from .errors import ConfigError, ParseError

logger = logging.getLogger(__name__)

SPLIT_NAMES = ("train-all", "train", "dev", "test")


@dataclass
class Candidate:
    docid: str
    answer: str
    label: int

    @property
    def tokens(self) -> list[str]:
        return tokenize(self.answer)


@dataclass
class Question:
    qid: str
    text: str
    candidates: list[Candidate] = field(default_factory=list)

    @property
    def tokens(self) -> list[str]:
        return tokenize(self.text)

    @property
    def labels(self) -> list[int]:
        return [c.label for c in self.candidates]


@dataclass
class DatasetSplit:
    name: str
    questions: list[Question] = field(default_factory=list)

    @property
    def n_pairs(self) -> int:
        return sum(len(q.candidates) for q in self.questions)

    @property
    def n_positive(self) -> int:
        return sum(sum(q.labels) for q in self.questions)

    def stats(self) -> tuple[int, int, float]:
        """``(questions, pairs, percent positive)``."""
        pairs = self.n_pairs
        pct = 100.0 * self.n_positive / pairs if pairs else 0.0
        return len(self.questions), pairs, pct

    def subsample(self, n_questions: int, seed: int) -> "DatasetSplit":
        """A fixed random subset of questions, kept in file order."""
        if n_questions >= len(self.questions):
            return self
        rng = np.random.default_rng(seed)
        keep = sorted(rng.choice(len(self.questions), size=n_questions, replace=False))
        return DatasetSplit(self.name, [self.questions[i] for i in keep])


def _docid(qid: str, index: int) -> str:
    # zero-padded so string order equals candidate order
    return f"{qid}-{index:04d}"


def parse_split(path: str | Path, name: str | None = None) -> DatasetSplit:
    path = Path(path)
    split = DatasetSplit(name or path.stem)
    by_qid: dict[str, Question] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 4:
                raise ParseError(f"expected 4 tab-separated columns, found {len(cols)}", path=path, line=lineno)
            qid, label, qtext, atext = cols
            if label not in ("0", "1"):
                raise ParseError(f"label must be 0 or 1, got {label!r}", path=path, line=lineno)
            if not qid:
                raise ParseError("empty qid", path=path, line=lineno)
            question = by_qid.get(qid)
            if question is None:
                question = by_qid[qid] = Question(qid, qtext)
                split.questions.append(question)
            elif question.text != qtext:
                raise ParseError(f"question text differs from earlier rows of qid {qid}", path=path, line=lineno)
            question.candidates.append(Candidate(_docid(qid, len(question.candidates)), atext, int(label)))
    return split


def write_split(split: DatasetSplit, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for q in split.questions:
            for c in q.candidates:
                fh.write(f"{q.qid}\t{c.label}\t{q.text}\t{c.answer}\n")


def filter_degenerate(split: DatasetSplit) -> DatasetSplit:
    """Drop questions whose candidates are all positive or all negative."""
    kept = [q for q in split.questions if 0 < sum(q.labels) < len(q.candidates)]
    return DatasetSplit(split.name, kept)


_XML_BLOCK = re.compile(r"<(question|positive|negative)>\s*\n(.*?)\n", re.S)
_XML_PAIR = re.compile(r"<QApairs\s+id=['\"]([^'\"]+)['\"]\s*>(.*?)</QApairs>", re.S)


def convert_xml(src: str | Path, dst: str | Path) -> DatasetSplit:
    """Convert a jacana-style ``<QApairs>`` XML file to the TSV interchange format.

    Each ``<question>``/``<positive>``/``<negative>`` block's first line holds
    the tab-separated tokens; the remaining annotation lines are ignored.
    """
    text = Path(src).read_text(encoding="utf-8")
    split = DatasetSplit(Path(dst).stem)
    for qid, body in _XML_PAIR.findall(text):
        question = None
        for tag, first in _XML_BLOCK.findall(body):
            sentence = " ".join(first.split("\t")).strip()
            if tag == "question":
                question = Question(qid, sentence)
                split.questions.append(question)
            elif question is None:
                raise ParseError(f"candidate before question in QApairs {qid}", path=src)
            else:
                label = 1 if tag == "positive" else 0
                question.candidates.append(Candidate(_docid(qid, len(question.candidates)), sentence, label))
    # questions without any candidate carry no rows in the TSV format
    split.questions = [q for q in split.questions if q.candidates]
    write_split(split, dst)
    return split


# ---------------------------------------------------------------------------
# features
# ---------------------------------------------------------------------------


@dataclass
class IdfTable:
    """``idf(t) = ln(N / df(t))``; tokens never seen get the largest observed idf."""

    weights: dict[str, float]
    n_docs: int

    def __post_init__(self):
        self.max_idf = max(self.weights.values(), default=0.0)

    def __getitem__(self, token: str) -> float:
        return self.weights.get(token, self.max_idf)


def build_idf(documents: DatasetSplit | Iterable[Sequence[str]]) -> IdfTable:
    """Document frequencies over candidate answer sentences.

    Accepts a split (each candidate answer is one document) or an iterable
    of token lists.
    """
    if isinstance(documents, DatasetSplit):
        docs = [c.tokens for q in documents.questions for c in q.candidates]
    else:
        docs = [list(d) for d in documents]
    if not docs:
        raise ConfigError("cannot build IDF weights from an empty corpus")
    df = Counter()
    for doc in docs:
        df.update(set(doc))
    n = len(docs)
    return IdfTable({tok: math.log(n / count) for tok, count in df.items()}, n)


def overlap_features(q: Sequence[str], a: Sequence[str], idf: IdfTable) -> np.ndarray:
    """``[overlap, idf_weighted_overlap]``, both normalized by the question side."""
    uq, ua = set(q), set(a)
    common = uq & ua
    overlap = len(common) / len(uq) if uq else 0.0
    denom = sum(idf[t] for t in uq)
    weighted = sum(idf[t] for t in common) / denom if denom > 0 else 0.0
    return np.array([overlap, weighted])


@dataclass
class QAInstance:
    qid: str
    docid: str
    question: TokenSequence
    answer: TokenSequence
    label: int
    features: np.ndarray


def build_instances(
    split: DatasetSplit,
    table: EmbeddingTable,
    idf: IdfTable,
    q_len: int = 40,
    a_len: int = 40,
) -> list[QAInstance]:
    """Shape every question/candidate pair and attach its overlap features."""
    out = []
    q_fit = a_fit = q_total = a_total = 0
    for q in split.questions:
        q_tokens = q.tokens
        q_seq = shape_sequence(q_tokens, q_len, table)
        q_total += 1
        q_fit += len(q_tokens) <= q_len
        for c in q.candidates:
            a_tokens = c.tokens
            a_total += 1
            a_fit += len(a_tokens) <= a_len
            out.append(
                QAInstance(
                    q.qid,
                    c.docid,
                    q_seq,
                    shape_sequence(a_tokens, a_len, table),
                    c.label,
                    overlap_features(q_tokens, a_tokens, idf),
                )
            )
    for what, fit, total, limit in (("question", q_fit, q_total, q_len), ("answer", a_fit, a_total, a_len)):
        if total and fit / total < 0.95:
            logger.warning(
                "%s: only %.1f%% of %s sentences fit in %d tokens", split.name, 100.0 * fit / total, what, limit
            )
    return out


def group_by_question(instances: Sequence[QAInstance]) -> dict[str, list[QAInstance]]:
    groups: dict[str, list[QAInstance]] = {}
    for inst in instances:
        groups.setdefault(inst.qid, []).append(inst)
    return groups


def make_batches(instances: Sequence, batch_size: int, seed: int | None = None, train: bool = True) -> list[list]:
    """Train mode shuffles by ``seed`` and drops the short tail; eval keeps order and the tail."""
    if batch_size < 2:
        raise ConfigError(f"batch size must be >= 2 for batch normalization, got {batch_size}")
    order = np.arange(len(instances))
    if train:
        order = np.random.default_rng(seed).permutation(len(instances))
    batches = [[instances[i] for i in order[s:s + batch_size]] for s in range(0, len(order), batch_size)]
    if train and batches and len(batches[-1]) < batch_size:
        batches.pop()
    return batches


def synthetic_split(
    name: str = "toy",
    n_questions: int = 5,
    n_candidates: int = 4,
    vocab_size: int = 30,
    sentence_len: int = 6,
    seed: int = 0,
) -> DatasetSplit:
    """Small random split where positives share more words with the question.

    Every question gets at least one positive and one negative candidate.
    """
    if n_candidates < 2:
        raise ConfigError("need at least two candidates per question")
    rng = np.random.default_rng(seed)
    vocab = [f"w{i}" for i in range(vocab_size)]
    split = DatasetSplit(name)
    for qi in range(n_questions):
        q_words = list(rng.choice(vocab, size=sentence_len, replace=False))
        question = Question(f"q{qi}", " ".join(q_words))
        n_pos = int(rng.integers(1, n_candidates))
        labels = [1] * n_pos + [0] * (n_candidates - n_pos)
        rng.shuffle(labels)
        for label in labels:
            if label:
                keep = list(rng.choice(q_words, size=sentence_len // 2, replace=False))
                fill = list(rng.choice(vocab, size=sentence_len - len(keep)))
                words = keep + fill
            else:
                words = list(rng.choice(vocab, size=sentence_len))
            rng.shuffle(words)
            question.candidates.append(Candidate(_docid(question.qid, len(question.candidates)), " ".join(words), label))
        split.questions.append(question)
    return split
