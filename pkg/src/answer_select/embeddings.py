"""Vocabulary, tokenization and pre-trained word vectors."""

from __future__ import annotations

import hashlib
import logging
import string
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ConfigError, ParseError

logger = logging.getLogger(__name__)

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"
_PUNCT = string.punctuation


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip edge punctuation, drop empties.

    >>> tokenize("U.S.-based, 1971.")
    ['u.s.-based', '1971']
    """
    tokens = (tok.strip(_PUNCT) for tok in text.lower().split())
    return [tok for tok in tokens if tok]


@dataclass
class EmbeddingTable:
    """Token vocabulary and a ``|V| x d`` matrix.

    Index 0 is the padding token (always the zero vector) and index 1 the
    unknown-word token.
    """

    tokens: list[str]
    vectors: np.ndarray

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.tokens):
            raise ConfigError(f"vector matrix {self.vectors.shape} does not match {len(self.tokens)} tokens")
        if self.tokens[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise ConfigError("first two vocabulary entries must be the PAD and UNK tokens")
        self.index = {tok: i for i, tok in enumerate(self.tokens)}

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def lookup(self, token: str) -> int:
        return self.index.get(token, UNK)

    def vocab_hash(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()

    @classmethod
    def from_rows(cls, rows: dict[str, np.ndarray] | list[tuple[str, np.ndarray]], unk: np.ndarray | None = None):
        """Prepend PAD (zeros) and UNK (``unk`` or the mean row) to ``rows``."""
        items = list(rows.items()) if isinstance(rows, dict) else list(rows)
        if not items and unk is None:
            raise ConfigError("cannot build an embedding table from zero rows without an UNK vector")
        mat = np.array([vec for _, vec in items], dtype=np.float64)
        dim = mat.shape[1] if items else len(unk)
        mat = mat.reshape(len(items), dim)
        unk_vec = mat.mean(axis=0) if unk is None else np.asarray(unk, dtype=np.float64)
        vectors = np.vstack([np.zeros((1, dim)), unk_vec[None], mat])
        return cls([PAD_TOKEN, UNK_TOKEN] + [tok for tok, _ in items], vectors)

    @classmethod
    def random(cls, vocabulary: Iterable[str], dim: int, seed: int = 0, scale: float = 0.5):
        """Gaussian vectors for a vocabulary, used when no pre-trained file is given."""
        rng = np.random.default_rng(seed)
        vocab = sorted(set(vocabulary) - {PAD_TOKEN, UNK_TOKEN})
        mat = scale * rng.standard_normal((len(vocab), dim))
        return cls.from_rows(list(zip(vocab, mat)), unk=scale * rng.standard_normal(dim))

    def restrict(self, keep: Iterable[str]) -> "EmbeddingTable":
        """Sub-table with rows for ``keep`` only; PAD/UNK rows are carried over."""
        keep = set(keep)
        rows = [(tok, self.vectors[i]) for i, tok in enumerate(self.tokens[2:], start=2) if tok in keep]
        return EmbeddingTable.from_rows(rows, unk=self.vectors[UNK])


def load_embeddings(path: str | Path, expected_dim: int = 50, keep: Iterable[str] | None = None) -> EmbeddingTable:
    """Read a whitespace-separated text file: a token then ``expected_dim`` reals per line.

    UNK is the mean of every vector in the file, even when ``keep`` limits
    which rows are retained.  Duplicate tokens keep their first occurrence.
    """
    keep = set(keep) if keep is not None else None
    rows: list[tuple[str, np.ndarray]] = []
    seen: set[str] = {PAD_TOKEN, UNK_TOKEN}
    total = np.zeros(expected_dim)
    count = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            if len(parts) != expected_dim + 1:
                raise ParseError(f"expected {expected_dim} values, found {len(parts) - 1}", path=path, line=lineno)
            token = parts[0]
            try:
                vec = np.array(parts[1:], dtype=np.float64)
            except ValueError as exc:
                raise ParseError(f"non-numeric vector entry ({exc})", path=path, line=lineno) from None
            if token in seen:
                logger.warning("%s:%d: duplicate token %r ignored", path, lineno, token)
                continue
            seen.add(token)
            total += vec
            count += 1
            if keep is None or token in keep:
                rows.append((token, vec))
    if count == 0:
        raise ParseError("no vectors found", path=path)
    return EmbeddingTable.from_rows(rows, unk=total / count)


@dataclass
class TokenSequence:
    """Token ids shaped to a fixed length, plus the length before shaping."""

    ids: np.ndarray
    length: int

    def __len__(self) -> int:
        return len(self.ids)


def shape_sequence(tokens: list[str], fixed_len: int, table: EmbeddingTable) -> TokenSequence:
    """Map to ids, truncate or PAD-fill at the tail to exactly ``fixed_len``."""
    if fixed_len < 1:
        raise ConfigError(f"fixed length must be >= 1, got {fixed_len}")
    ids = np.full(fixed_len, PAD, dtype=np.int64)
    head = [table.lookup(tok) for tok in tokens[:fixed_len]]
    ids[: len(head)] = head
    return TokenSequence(ids, len(tokens))
