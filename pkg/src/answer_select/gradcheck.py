"""Central finite-difference checks for the whole network."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import build_idf, build_instances, synthetic_split
from .embeddings import PAD, EmbeddingTable
from .matchnet import ConvSpec, NetConfig, forward, init_params
from .similarity import Measurement
from .trainer import cross_entropy_loss

STEP = 1e-5
TOLERANCE = 1e-4
# gradients below this norm (e.g. a conv bias cancelled by batch norm) are
# compared on an absolute scale
NORM_FLOOR = 1e-6


def numerical_gradient(f: Callable[[], float], x: np.ndarray, step: float = STEP) -> np.ndarray:
    """Central differences of ``f`` with respect to every entry of ``x`` (perturbed in place)."""
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f()
        flat[i] = orig - step
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    diff = np.linalg.norm(analytic - numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), NORM_FLOOR)
    return float(diff / scale)


def check_gradients(
    loss_fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    step: float = STEP,
    frozen: dict[int, slice] | None = None,
) -> list[float]:
    """Relative error between backprop and finite differences, per tensor.

    ``frozen`` maps a tensor position to leading-axis rows that training
    never updates (the PAD embedding row); those rows are left out.
    """
    frozen = frozen or {}
    loss = loss_fn()
    analytic = [g.copy() for g in ad.backward(loss, tensors)]

    def value() -> float:
        return loss_fn().item()

    errors = []
    for i, (a, t) in enumerate(zip(analytic, tensors)):
        numeric = numerical_gradient(value, t.data, step)
        if i in frozen:
            keep = np.ones(t.shape[0], dtype=bool)
            keep[frozen[i]] = False
            a, numeric = a[keep], numeric[keep]
        errors.append(relative_error(a, numeric))
    return errors


@dataclass
class GroupResult:
    measurement: str
    group: str
    error: float

    @property
    def ok(self) -> bool:
        return self.error < TOLERANCE


GROUPS = {
    "embedding": "W",
    "metric.U": "U",
    "metric.B": "B",
    "conv": "filters",
    "bn": "batchnorm",
    "head": "head",
}


def _group(name: str) -> str:
    for prefix, group in GROUPS.items():
        if name.startswith(prefix):
            return group
    return name


def tiny_config(measurement: str, k: int = 2, depth: int = 2) -> NetConfig:
    """d=5, 7x7 maps, two filters per layer."""
    layers = [ConvSpec(2, (3, 3), (2, 2), (1, 1)) for _ in range(depth - 1)] + [ConvSpec(2, (3, 3), None)]
    return NetConfig(
        measurement=measurement,
        k=k if measurement == "metric" else 1,
        layers=tuple(layers),
        dropout=0.5,
        q_len=7,
        a_len=7,
        dim=5,
    )


def tiny_problem(measurement: str, seed: int = 0, k: int = 2, depth: int = 2, lam: float = 5e-4):
    """Config, params, a four-pair batch and its loss closure."""
    cfg = tiny_config(measurement, k, depth)
    split = synthetic_split("gradcheck", n_questions=2, n_candidates=2, vocab_size=12, sentence_len=6, seed=seed)
    vocab = {tok for q in split.questions for tok in q.tokens + [t for c in q.candidates for t in c.tokens]}
    table = EmbeddingTable.random(vocab, cfg.dim, seed=seed)
    params = init_params(cfg, table, seed=seed)
    rng = np.random.default_rng(seed + 1)
    # move away from the symmetric initialization so every group carries signal
    for name, t in params.tensors.items():
        if name != "embedding":
            t.data += 0.3 * rng.standard_normal(t.shape)
    batch = build_instances(split, table, build_idf(split), cfg.q_len, cfg.a_len)
    labels = np.array([inst.label for inst in batch], dtype=np.float64)

    def loss_fn() -> Tensor:
        probs = forward(batch, params, cfg, training=True, seed=seed)
        metric = params.metric()
        return cross_entropy_loss(probs, labels, None if metric is None else metric.U, lam)

    return cfg, params, loss_fn


def run_suite(seed: int = 0, measurements: Sequence[str] = ("euclidean", "cosine", "metric")) -> list[GroupResult]:
    """Max relative error per parameter group, for each measurement."""
    results = []
    for m in measurements:
        _, params, loss_fn = tiny_problem(m, seed)
        names = [n for n, _ in params.trainable()]
        frozen = {names.index("embedding"): slice(PAD, PAD + 1)}
        errors = check_gradients(loss_fn, [t for _, t in params.trainable()], frozen=frozen)
        worst: dict[str, float] = {}
        for name, err in zip(names, errors):
            g = _group(name)
            worst[g] = max(worst.get(g, 0.0), err)
        results.extend(GroupResult(Measurement.parse(m).value, g, e) for g, e in worst.items())
    return results
