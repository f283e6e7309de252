"""MAP / MRR in the trec_eval sense, plus run-file and qrels emission."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ParseError, UndefinedMetricError

logger = logging.getLogger(__name__)


def average_precision(labels: Sequence[int]) -> float:
    """AP of a ranked label list (best-scored first).

    >>> average_precision([0, 1, 0, 1])
    0.5
    """
    hits = 0
    total = 0.0
    for rank, label in enumerate(labels, start=1):
        if label > 0:
            hits += 1
            total += hits / rank
    if hits == 0:
        raise UndefinedMetricError("average precision is undefined without a relevant candidate")
    return total / hits


def reciprocal_rank(labels: Sequence[int]) -> float:
    for rank, label in enumerate(labels, start=1):
        if label > 0:
            return 1.0 / rank
    raise UndefinedMetricError("reciprocal rank is undefined without a relevant candidate")


@dataclass
class QuestionRun:
    docids: list[str]
    scores: list[float]
    labels: list[int]

    def ranked(self) -> list[int]:
        """Candidate positions by descending score; ties by docid ascending."""
        return sorted(range(len(self.docids)), key=lambda i: (-self.scores[i], self.docids[i]))

    def has_ties(self) -> bool:
        return len(set(self.scores)) < len(self.scores)


@dataclass
class RankedRun:
    questions: dict[str, QuestionRun] = field(default_factory=dict)
    run_id: str = "run"

    def add(self, qid: str, docid: str, score: float, label: int) -> None:
        q = self.questions.setdefault(qid, QuestionRun([], [], []))
        q.docids.append(docid)
        q.scores.append(float(score))
        q.labels.append(int(label))

    @classmethod
    def from_instances(cls, instances: Iterable, scores: Iterable[float], run_id: str = "run") -> "RankedRun":
        run = cls(run_id=run_id)
        for inst, s in zip(instances, scores):
            run.add(inst.qid, inst.docid, s, inst.label)
        return run


@dataclass
class EvalReport:
    map: float
    mrr: float
    ap: dict[str, float]
    rr: dict[str, float]
    excluded: list[str] = field(default_factory=list)
    ties: list[str] = field(default_factory=list)

    @property
    def n_questions(self) -> int:
        return len(self.ap)

    def as_text(self) -> str:
        """Aligned table followed by ``key=value`` lines."""
        width = max([len("question")] + [len(q) for q in self.ap])
        lines = [f"{'question':<{width}}  {'AP':>8}  {'RR':>8}"]
        for qid in self.ap:
            lines.append(f"{qid:<{width}}  {self.ap[qid]:8.4f}  {self.rr[qid]:8.4f}")
        lines.append(f"{'all':<{width}}  {self.map:8.4f}  {self.mrr:8.4f}")
        lines.append("")
        lines.extend(f"{k}={v}" for k, v in self.summary().items())
        return "\n".join(lines) + "\n"

    def summary(self) -> dict[str, object]:
        return {
            "map": f"{self.map:.4f}",
            "mrr": f"{self.mrr:.4f}",
            "questions": self.n_questions,
            "excluded": len(self.excluded),
            "tied_questions": len(self.ties),
        }


def evaluate(run: RankedRun) -> EvalReport:
    ap: dict[str, float] = {}
    rr: dict[str, float] = {}
    excluded, ties = [], []
    for qid, q in run.questions.items():
        labels = [q.labels[i] for i in q.ranked()]
        if not any(labels):
            excluded.append(qid)
            continue
        if q.has_ties():
            ties.append(qid)
        ap[qid] = average_precision(labels)
        rr[qid] = reciprocal_rank(labels)
    if excluded:
        logger.warning("%d question(s) without a positive candidate excluded: %s", len(excluded), ", ".join(excluded))
    if ties:
        # trec_eval orders tied documents by docno descending, we use ascending
        logger.warning("%d question(s) have tied scores; trec_eval may order them differently", len(ties))
    if not ap:
        raise UndefinedMetricError("no question in the run has a positive candidate")
    return EvalReport(float(np.mean(list(ap.values()))), float(np.mean(list(rr.values()))), ap, rr, excluded, ties)


def emit_run_file(run: RankedRun, path: str | Path) -> None:
    """Write ``qid Q0 docid rank score runid`` lines, rank 1-based."""
    with open(path, "w", encoding="utf-8") as fh:
        for qid, q in run.questions.items():
            for rank, i in enumerate(q.ranked(), start=1):
                fh.write(f"{qid} Q0 {q.docids[i]} {rank} {q.scores[i]:.6f} {run.run_id}\n")


def emit_qrels(run: RankedRun, path: str | Path) -> None:
    """Write ``qid 0 docid label`` lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for qid, q in run.questions.items():
            for docid, label in zip(q.docids, q.labels):
                fh.write(f"{qid} 0 {docid} {label}\n")


def read_run_file(path: str | Path) -> dict[str, list[tuple[str, int, float]]]:
    """Parse a run file into ``qid -> [(docid, rank, score), ...]`` in file order."""
    out: dict[str, list[tuple[str, int, float]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            cols = line.split()
            if not cols:
                continue
            if len(cols) != 6:
                raise ParseError(f"expected 6 columns, found {len(cols)}", path=path, line=lineno)
            qid, _, docid, rank, score, _ = cols
            out.setdefault(qid, []).append((docid, int(rank), float(score)))
    return out


def read_qrels(path: str | Path) -> dict[str, dict[str, int]]:
    out: dict[str, dict[str, int]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            cols = line.split()
            if not cols:
                continue
            if len(cols) != 4:
                raise ParseError(f"expected 4 columns, found {len(cols)}", path=path, line=lineno)
            out.setdefault(cols[0], {})[cols[2]] = int(cols[3])
    return out
