"""Pointwise training: cross-entropy + Frobenius penalty, AdaDelta, early stopping."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, record
from .data import QAInstance, make_batches
from .errors import ConfigError, DimensionError, NumericalError
from .evaluation import EvalReport, RankedRun, evaluate
from .matchnet import ModelParams, NetConfig, forward, score_instances
from .similarity import frobenius_penalty

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lam: float = 5e-4
    batch_size: int = 50
    max_epochs: int = 50
    patience: int = 5
    rho: float = 0.95
    eps: float = 1e-6
    seed: int = 0
    clip: float = 1e-7
    early_stopping: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError(f"lambda must be non-negative, got {self.lam}")
        if self.batch_size < 2:
            raise ConfigError(f"batch size must be >= 2, got {self.batch_size}")
        if self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("max_epochs and patience must be >= 1")
        if not 0 < self.rho < 1 or self.eps <= 0 or not 0 < self.clip < 0.5:
            raise ConfigError("rho must lie in (0, 1), eps > 0, clip in (0, 0.5)")


def binary_cross_entropy(probs: Tensor, labels: np.ndarray, clip: float = 1e-7) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under ``probs`` clipped to ``[clip, 1 - clip]``.

    Clipped entries pass no gradient.
    """
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != probs.shape:
        raise DimensionError(f"{probs.shape[0] if probs.shape else 1} probabilities for {y.size} labels")
    n = y.size
    p = np.clip(probs.data, clip, 1.0 - clip)
    value = -np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    inside = (probs.data >= clip) & (probs.data <= 1.0 - clip)

    def _back(g):
        return (np.where(inside, g * (p - y) / (n * p * (1.0 - p)), 0.0),)

    return record(np.array(value), (probs,), _back, "bce")


def cross_entropy_loss(probs: Tensor, labels, U: Tensor | None, lam: float, clip: float = 1e-7) -> Tensor:
    """Data term plus ``(lam / 2) * sum_k ||U_k||_F^2`` (no penalty when ``U`` is None)."""
    loss = binary_cross_entropy(probs, labels, clip)
    if U is not None:
        loss = loss + frobenius_penalty(U, lam)
    return loss


def adadelta_step(
    x: np.ndarray, g: np.ndarray, sq_grad: np.ndarray, sq_delta: np.ndarray, rho: float = 0.95, eps: float = 1e-6
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One AdaDelta update; returns ``(x, E[g^2], E[dx^2])`` as new arrays."""
    sq_grad = rho * sq_grad + (1.0 - rho) * g * g
    delta = -np.sqrt(sq_delta + eps) / np.sqrt(sq_grad + eps) * g
    sq_delta = rho * sq_delta + (1.0 - rho) * delta * delta
    return x + delta, sq_grad, sq_delta


@dataclass
class AdaDelta:
    """Per-parameter accumulators ``E[g^2]`` and ``E[dx^2]``."""

    rho: float = 0.95
    eps: float = 1e-6
    state: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def step(self, named: Sequence[tuple[str, Tensor]], grads: Sequence[np.ndarray]) -> None:
        for (name, _), g in zip(named, grads):
            if not np.isfinite(g).all():
                raise NumericalError(f"non-finite gradient for parameter {name!r}")
        for (name, t), g in zip(named, grads):
            sq_grad, sq_delta = self.state.get(name) or (np.zeros_like(t.data), np.zeros_like(t.data))
            t.data, sq_grad, sq_delta = adadelta_step(t.data, g, sq_grad, sq_delta, self.rho, self.eps)
            self.state[name] = (sq_grad, sq_delta)


class EarlyStopping:
    """Track the best metric; stop after ``patience`` epochs without a strict improvement."""

    def __init__(self, patience: int = 5):
        self.patience = patience
        self.best = -math.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch: int, metric: float) -> bool:
        if metric > self.best:
            self.best, self.best_epoch, self.bad_epochs = metric, epoch, 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    dev_map: float
    dev_mrr: float
    seconds: float

    def line(self) -> str:
        return f"{self.epoch}\t{self.loss:.8f}\t{self.dev_map:.6f}\t{self.dev_mrr:.6f}\t{self.seconds:.2f}"


@dataclass
class TrainResult:
    params: ModelParams
    last_params: ModelParams
    log: list[EpochRecord]
    best_epoch: int
    stopped_early: bool

    @property
    def final_loss(self) -> float:
        return self.log[-1].loss


def evaluate_instances(instances: Sequence[QAInstance], params: ModelParams, cfg: NetConfig) -> EvalReport:
    scores = score_instances(instances, params, cfg)
    return evaluate(RankedRun.from_instances(instances, scores))


def train_epoch(
    instances: Sequence[QAInstance],
    params: ModelParams,
    net_cfg: NetConfig,
    train_cfg: TrainConfig,
    optimizer: AdaDelta,
    epoch: int,
) -> float:
    """One pass over shuffled mini-batches; returns the mean batch objective."""
    batch_size = min(train_cfg.batch_size, len(instances))
    named = params.trainable()
    tensors = [t for _, t in named]
    metric = params.metric()
    losses = []
    for b, batch in enumerate(make_batches(instances, batch_size, seed=[train_cfg.seed, epoch], train=True)):
        dropout_rng = np.random.default_rng([train_cfg.seed, epoch, b])
        probs = forward(batch, params, net_cfg, training=True, seed=dropout_rng)
        labels = np.array([inst.label for inst in batch], dtype=np.float64)
        loss = cross_entropy_loss(probs, labels, None if metric is None else metric.U, train_cfg.lam, train_cfg.clip)
        if not np.isfinite(loss.data):
            raise NumericalError(f"non-finite loss in epoch {epoch}, batch {b}")
        grads = ad.backward(loss, tensors)
        optimizer.step(named, grads)
        losses.append(loss.item())
    return float(np.mean(losses))


def train(
    train_set: Sequence[QAInstance],
    dev_set: Sequence[QAInstance],
    params: ModelParams,
    net_cfg: NetConfig,
    train_cfg: TrainConfig,
    log_path: str | Path | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> TrainResult:
    """Train ``params`` in place; return the best-dev-MAP snapshot and the log.

    With ``early_stopping`` off the run always lasts ``max_epochs``; the
    best snapshot is still tracked.
    """
    if len(train_set) < 2:
        raise ConfigError("training needs at least two instances")
    if not dev_set:
        raise ConfigError("early stopping needs a non-empty dev set")
    optimizer = AdaDelta(train_cfg.rho, train_cfg.eps)
    stopper = EarlyStopping(train_cfg.patience)
    best = params.copy()
    log: list[EpochRecord] = []
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    stopped = False
    try:
        if log_fh:
            log_fh.write("epoch\ttrain_loss\tdev_map\tdev_mrr\tseconds\n")
        for epoch in range(1, train_cfg.max_epochs + 1):
            start = time.perf_counter()
            loss = train_epoch(train_set, params, net_cfg, train_cfg, optimizer, epoch)
            report = evaluate_instances(dev_set, params, net_cfg)
            record_ = EpochRecord(epoch, loss, report.map, report.mrr, time.perf_counter() - start)
            log.append(record_)
            if log_fh:
                log_fh.write(record_.line() + "\n")
                log_fh.flush()
            logger.info("epoch %d loss %.6f dev MAP %.4f MRR %.4f", epoch, loss, report.map, report.mrr)
            if on_epoch:
                on_epoch(record_)
            if stopper.update(epoch, report.map):
                best = params.copy()
            if train_cfg.early_stopping and stopper.should_stop:
                stopped = True
                break
    finally:
        if log_fh:
            log_fh.close()
    return TrainResult(best, params, log, stopper.best_epoch, stopped)
