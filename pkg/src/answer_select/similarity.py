"""Pairwise token similarity tensors.

Given shaped question embeddings ``q`` (``L1 x d``) and answer embeddings
``a`` (``L2 x d``), or batches of them (``N x L1 x d`` / ``N x L2 x d``),
build the ``k x L1 x L2`` (or ``N x k x L1 x L2``) similarity map fed to the
convolutional stack.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, parameter, record
from .errors import ConfigError, DimensionError


class Measurement(str, enum.Enum):
    EUCLIDEAN = "euclidean"
    COSINE = "cosine"
    METRIC = "metric"

    @classmethod
    def parse(cls, value: str) -> "Measurement":
        aliases = {"euc": cls.EUCLIDEAN, "cos": cls.COSINE}
        value = value.strip().lower()
        if value in aliases:
            return aliases[value]
        try:
            return cls(value)
        except ValueError:
            raise ConfigError(f"unknown measurement {value!r}; expected euclidean, cosine or metric") from None


@dataclass
class MetricParams:
    """Learnable bilinear forms ``U`` (``k x d x d``) and biases ``B`` (``k x L1 x L2``)."""

    U: Tensor
    B: Tensor

    @property
    def k(self) -> int:
        return self.U.shape[0]

    @property
    def dim(self) -> int:
        return self.U.shape[1]

    @classmethod
    def initialize(cls, k: int, dim: int, q_len: int, a_len: int, rng: np.random.Generator, noise: float = 0.01):
        """Identity plus gaussian noise for each ``U``; zero biases."""
        if k < 1:
            raise ConfigError(f"modality count must be >= 1, got {k}")
        U = np.stack([np.eye(dim) + noise * rng.standard_normal((dim, dim)) for _ in range(k)])
        return cls(parameter(U, "metric.U"), parameter(np.zeros((k, q_len, a_len)), "metric.B"))


def _batched_pair(q: Tensor, a: Tensor) -> tuple[np.ndarray, np.ndarray, bool]:
    if q.data.ndim != a.data.ndim or q.data.ndim not in (2, 3):
        raise DimensionError(f"expected L x d or N x L x d embeddings, got {q.shape} and {a.shape}")
    if q.shape[-1] != a.shape[-1]:
        raise DimensionError(f"embedding dimension differs: {q.shape[-1]} vs {a.shape[-1]}")
    if q.data.ndim == 2:
        return q.data[None], a.data[None], True
    if q.shape[0] != a.shape[0]:
        raise DimensionError(f"batch axis differs: {q.shape[0]} vs {a.shape[0]}")
    return q.data, a.data, False


def metric_similarity(q: Tensor, a: Tensor, U: Tensor, B: Tensor) -> Tensor:
    """``m[k, i, j] = q_i^T U_k a_j + B[k, i, j]`` for every modality."""
    qd, ad, single = _batched_pair(q, a)
    if U.data.ndim != 3 or U.shape[1] != U.shape[2]:
        raise DimensionError(f"U must be k x d x d, got {U.shape}")
    k, d, _ = U.shape
    if qd.shape[-1] != d:
        raise DimensionError(f"embedding dimension {qd.shape[-1]} does not match metric dimension {d}")
    L1, L2 = qd.shape[1], ad.shape[1]
    if B.shape != (k, L1, L2):
        raise DimensionError(f"B must be {(k, L1, L2)}, got {B.shape}")

    qU = np.einsum("nid,kde->nkie", qd, U.data)
    out = np.einsum("nkie,nje->nkij", qU, ad) + B.data[None]

    def _back(g):
        g4 = g[None] if single else g
        dqU = np.einsum("nkij,nje->nkie", g4, ad)
        dU = np.einsum("nid,nkie->kde", qd, dqU)
        dq = np.einsum("nkie,kde->nid", dqU, U.data)
        da = np.einsum("nkij,nkie->nje", g4, qU)
        dB = g4.sum(axis=0)
        if single:
            dq, da = dq[0], da[0]
        return (dq, da, dU, dB)

    return record(out[0] if single else out, (q, a, U, B), _back, "metric_similarity")


def euclidean_similarity(q: Tensor, a: Tensor) -> Tensor:
    """``m[0, i, j] = 1 / (1 + ||q_i - a_j||)``; a single channel."""
    qd, ad, single = _batched_pair(q, a)
    diff = qd[:, :, None, :] - ad[:, None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    sim = 1.0 / (1.0 + dist)
    out = sim[:, None]

    def _back(g):
        g3 = (g[None] if single else g)[:, 0]
        # d sim / d dist = -sim^2; the distance has zero subgradient at 0
        with np.errstate(divide="ignore", invalid="ignore"):
            coef = np.where(dist > 0, -g3 * sim * sim / dist, 0.0)
        contrib = coef[..., None] * diff
        dq = contrib.sum(axis=2)
        da = -contrib.sum(axis=1)
        if single:
            dq, da = dq[0], da[0]
        return (dq, da)

    return record(out[0] if single else out, (q, a), _back, "euclidean_similarity")


def cosine_similarity(q: Tensor, a: Tensor) -> Tensor:
    """Cosine of every token pair; pairs with a zero-norm vector give 0."""
    qd, ad, single = _batched_pair(q, a)
    qn = np.sqrt((qd * qd).sum(axis=-1))
    an = np.sqrt((ad * ad).sum(axis=-1))
    dot = np.einsum("nid,njd->nij", qd, ad)
    denom = qn[:, :, None] * an[:, None, :]
    live = denom > 0
    safe = np.where(live, denom, 1.0)
    sim = np.where(live, dot / safe, 0.0)
    out = sim[:, None]

    def _back(g):
        g3 = (g[None] if single else g)[:, 0]
        w = np.where(live, g3 / safe, 0.0)
        gs = np.where(live, g3 * sim, 0.0)
        q_sq = np.where(qn > 0, qn * qn, 1.0)
        a_sq = np.where(an > 0, an * an, 1.0)
        dq = np.einsum("nij,njd->nid", w, ad) - (gs.sum(axis=2) / q_sq)[..., None] * qd
        da = np.einsum("nij,nid->njd", w, qd) - (gs.sum(axis=1) / a_sq)[..., None] * ad
        if single:
            dq, da = dq[0], da[0]
        return (dq, da)

    return record(out[0] if single else out, (q, a), _back, "cosine_similarity")


def frobenius_penalty(U: Tensor, lam: float) -> Tensor:
    """``(lam / 2) * sum_k ||U_k||_F^2``; its gradient is ``lam * U``."""
    if lam < 0:
        raise ConfigError(f"regularization weight must be non-negative, got {lam}")
    value = 0.5 * lam * float((U.data * U.data).sum())
    return record(np.array(value), (U,), lambda g: (g * lam * U.data,), "frobenius")


def similarity(measurement: Measurement, q: Tensor, a: Tensor, metric: MetricParams | None = None) -> Tensor:
    if measurement is Measurement.METRIC:
        if metric is None:
            raise ConfigError("metric measurement needs MetricParams")
        return metric_similarity(q, a, metric.U, metric.B)
    if measurement is Measurement.EUCLIDEAN:
        return euclidean_similarity(q, a)
    if measurement is Measurement.COSINE:
        return cosine_similarity(q, a)
    raise ConfigError(f"unknown measurement {measurement!r}")
