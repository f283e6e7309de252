"""The matching network: similarity map -> conv stack -> features -> probability."""

from __future__ import annotations

import base64
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, parameter
from .data import IdfTable, QAInstance
from .embeddings import EmbeddingTable, TokenSequence
from .errors import ConfigError, ParseError
from .similarity import Measurement, MetricParams, similarity

CHECKPOINT_FORMAT = "answer-select-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ConvSpec:
    """One conv -> BN -> tanh -> avg-pool block.

    ``pool=None`` averages the whole remaining map down to 1x1.
    """

    filters: int = 100
    kernel: tuple[int, int] = (3, 3)
    pool: tuple[int, int] | None = (2, 2)
    pool_stride: tuple[int, int] | None = None


@dataclass(frozen=True)
class NetConfig:
    measurement: Measurement = Measurement.METRIC
    k: int = 1
    layers: tuple[ConvSpec, ...] = (ConvSpec(), ConvSpec(pool=None))
    dropout: float = 0.5
    q_len: int = 40
    a_len: int = 40
    dim: int = 50
    n_features: int = 2
    bn_eps: float = 1e-5
    bn_momentum: float = 0.9

    def __post_init__(self):
        object.__setattr__(self, "measurement", Measurement.parse(str(getattr(self.measurement, "value", self.measurement))))
        object.__setattr__(self, "layers", tuple(ConvSpec(**l) if isinstance(l, dict) else l for l in self.layers))
        self.validate()

    @classmethod
    def preset(
        cls,
        measurement: str | Measurement = "metric",
        k: int = 1,
        depth: str = "deep",
        filters: int = 100,
        kernel: int = 3,
        pool: int = 2,
        **kwargs,
    ) -> "NetConfig":
        """Deep = two conv blocks, shallow = one; the last block always pools globally."""
        depths = {"deep": 2, "shallow": 1}
        if depth not in depths:
            raise ConfigError(f"depth must be 'deep' or 'shallow', got {depth!r}")
        n = depths[depth]
        layers = [ConvSpec(filters, (kernel, kernel), (pool, pool)) for _ in range(n - 1)]
        layers.append(ConvSpec(filters, (kernel, kernel), None))
        return cls(measurement=measurement, k=k, layers=tuple(layers), **kwargs)

    @property
    def channels(self) -> int:
        return self.k if self.measurement is Measurement.METRIC else 1

    def spatial_shapes(self) -> list[tuple[int, int]]:
        """Map extents after each block (after pooling)."""
        H, W = self.q_len, self.a_len
        out = []
        for t, spec in enumerate(self.layers, start=1):
            kh, kw = spec.kernel
            H, W = H - kh + 1, W - kw + 1
            if H < 1 or W < 1:
                raise ConfigError(f"layer {t}: kernel {kh}x{kw} leaves no output")
            if spec.pool is None:
                H, W = 1, 1
            else:
                ph, pw = spec.pool
                sh, sw = spec.pool_stride or spec.pool
                if ph > H or pw > W or min(ph, pw, sh, sw) < 1:
                    raise ConfigError(f"layer {t}: pool {ph}x{pw} stride {sh}x{sw} does not fit a {H}x{W} map")
                H, W = (H - ph) // sh + 1, (W - pw) // sw + 1
            out.append((H, W))
        return out

    def validate(self) -> None:
        if not self.layers:
            raise ConfigError("at least one conv layer is required")
        if self.k < 1:
            raise ConfigError(f"modality count must be >= 1, got {self.k}")
        if self.measurement is not Measurement.METRIC and self.k != 1:
            raise ConfigError(f"{self.measurement.value} similarity has a single channel; k must be 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if min(self.q_len, self.a_len, self.dim) < 1:
            raise ConfigError("sequence lengths and embedding dimension must be positive")
        for spec in self.layers:
            if spec.filters < 1:
                raise ConfigError("filter count must be positive")
        self.spatial_shapes()

    @property
    def flat_features(self) -> int:
        H, W = self.spatial_shapes()[-1]
        return self.layers[-1].filters * H * W

    def to_dict(self) -> dict:
        d = asdict(self)
        d["measurement"] = self.measurement.value
        d["layers"] = [
            {
                "filters": l.filters,
                "kernel": list(l.kernel),
                "pool": None if l.pool is None else list(l.pool),
                "pool_stride": None if l.pool_stride is None else list(l.pool_stride),
            }
            for l in self.layers
        ]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        d = dict(d)
        layers = []
        for l in d.pop("layers"):
            layers.append(
                ConvSpec(
                    int(l["filters"]),
                    tuple(l["kernel"]),
                    None if l.get("pool") is None else tuple(l["pool"]),
                    None if l.get("pool_stride") is None else tuple(l["pool_stride"]),
                )
            )
        return cls(layers=tuple(layers), **d)


@dataclass
class ModelParams:
    """Trainable tensors plus batch-norm running statistics, keyed by name."""

    tensors: dict[str, Tensor]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def trainable(self) -> list[tuple[str, Tensor]]:
        return list(self.tensors.items())

    def count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def copy(self) -> "ModelParams":
        tensors = {n: parameter(t.data.copy(), n) for n, t in self.tensors.items()}
        return ModelParams(tensors, {n: b.copy() for n, b in self.buffers.items()})

    def metric(self) -> MetricParams | None:
        if "metric.U" not in self.tensors:
            return None
        return MetricParams(self.tensors["metric.U"], self.tensors["metric.B"])

    def all_finite(self) -> bool:
        return all(np.isfinite(t.data).all() for t in self.tensors.values())


def init_params(cfg: NetConfig, table: EmbeddingTable, seed: int = 0) -> ModelParams:
    if table.dim != cfg.dim:
        raise ConfigError(f"embedding dimension {table.dim} does not match config dim {cfg.dim}")
    rng = np.random.default_rng(seed)
    tensors: dict[str, Tensor] = {"embedding": parameter(table.vectors.copy(), "embedding")}
    buffers: dict[str, np.ndarray] = {}
    if cfg.measurement is Measurement.METRIC:
        metric = MetricParams.initialize(cfg.k, cfg.dim, cfg.q_len, cfg.a_len, rng)
        tensors["metric.U"] = metric.U
        tensors["metric.B"] = metric.B
    channels = cfg.channels
    for t, spec in enumerate(cfg.layers, start=1):
        kh, kw = spec.kernel
        fan_in = channels * kh * kw
        tensors[f"conv{t}.filters"] = parameter(
            rng.standard_normal((spec.filters, channels, kh, kw)) / np.sqrt(fan_in), f"conv{t}.filters"
        )
        tensors[f"conv{t}.bias"] = parameter(np.zeros(spec.filters), f"conv{t}.bias")
        tensors[f"bn{t}.gamma"] = parameter(np.ones(spec.filters), f"bn{t}.gamma")
        tensors[f"bn{t}.beta"] = parameter(np.zeros(spec.filters), f"bn{t}.beta")
        buffers[f"bn{t}.running_mean"] = np.zeros(spec.filters)
        buffers[f"bn{t}.running_var"] = np.ones(spec.filters)
        channels = spec.filters
    n_in = cfg.flat_features + cfg.n_features
    tensors["head.weight"] = parameter(rng.standard_normal((1, n_in)) / np.sqrt(n_in), "head.weight")
    tensors["head.bias"] = parameter(np.zeros(1), "head.bias")
    return ModelParams(tensors, buffers)


def _stack(batch: Sequence[QAInstance]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    q_ids = np.stack([inst.question.ids for inst in batch])
    a_ids = np.stack([inst.answer.ids for inst in batch])
    feats = np.stack([np.asarray(inst.features, dtype=np.float64) for inst in batch])
    return q_ids, a_ids, feats


def forward_arrays(
    q_ids: np.ndarray,
    a_ids: np.ndarray,
    feats: np.ndarray,
    params: ModelParams,
    cfg: NetConfig,
    training: bool = False,
    seed=None,
) -> Tensor:
    """Probabilities for a batch of id arrays (``N x L1``, ``N x L2``, ``N x 2``)."""
    n = q_ids.shape[0]
    if q_ids.shape != (n, cfg.q_len) or a_ids.shape != (n, cfg.a_len):
        raise ConfigError(f"inputs must be shaped to ({cfg.q_len}, {cfg.a_len}), got {q_ids.shape}/{a_ids.shape}")
    if feats.shape != (n, cfg.n_features):
        raise ConfigError(f"expected {cfg.n_features} overlap features per pair, got {feats.shape}")
    table = params["embedding"]
    q = ad.embedding(table, q_ids)
    a = ad.embedding(table, a_ids)
    h = similarity(cfg.measurement, q, a, params.metric())
    for t, spec in enumerate(cfg.layers, start=1):
        h = ad.conv2d(h, params[f"conv{t}.filters"], params[f"conv{t}.bias"])
        h = ad.batch_norm(
            h,
            params[f"bn{t}.gamma"],
            params[f"bn{t}.beta"],
            params.buffers[f"bn{t}.running_mean"],
            params.buffers[f"bn{t}.running_var"],
            training=training,
            eps=cfg.bn_eps,
            momentum=cfg.bn_momentum,
        )
        h = ad.tanh(h)
        h = ad.avg_pool2d(h, spec.pool, spec.pool_stride)
        if t == 1:
            h = ad.dropout(h, cfg.dropout, seed, training)
    flat = ad.reshape(h, (n, -1))
    z = ad.concat([flat, Tensor(feats)], axis=1)
    logit = ad.affine(z, params["head.weight"], params["head.bias"])
    return ad.sigmoid(ad.reshape(logit, (n,)))


def forward(batch, params: ModelParams, cfg: NetConfig, training: bool = False, seed=None) -> Tensor:
    """Probability for one ``QAInstance`` (scalar) or a list of them (vector)."""
    if isinstance(batch, QAInstance):
        return ad.reshape(forward([batch], params, cfg, training, seed), ())
    return forward_arrays(*_stack(batch), params, cfg, training=training, seed=seed)


def score_candidates(
    question: TokenSequence,
    answers: Sequence[TokenSequence],
    features: np.ndarray,
    params: ModelParams,
    cfg: NetConfig,
    batch_size: int = 256,
) -> np.ndarray:
    """Inference-mode probabilities for each answer, in answer order."""
    if not len(answers):
        return np.zeros(0)
    feats = np.asarray(features, dtype=np.float64).reshape(len(answers), cfg.n_features)
    out = []
    for s in range(0, len(answers), batch_size):
        chunk = answers[s:s + batch_size]
        q_ids = np.tile(question.ids, (len(chunk), 1))
        a_ids = np.stack([a.ids for a in chunk])
        out.append(forward_arrays(q_ids, a_ids, feats[s:s + batch_size], params, cfg).data)
    return np.concatenate(out)


def score_instances(instances: Sequence[QAInstance], params: ModelParams, cfg: NetConfig, batch_size: int = 256) -> np.ndarray:
    out = [
        forward_arrays(*_stack(instances[s:s + batch_size]), params, cfg).data
        for s in range(0, len(instances), batch_size)
    ]
    return np.concatenate(out) if out else np.zeros(0)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def _encode(arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(arr.shape), "data": base64.b64encode(arr.tobytes()).decode("ascii")}


def _decode(entry: dict) -> np.ndarray:
    raw = base64.b64decode(entry["data"], validate=True)
    return np.frombuffer(raw, dtype="<f8").reshape(entry["shape"]).astype(np.float64)


def save_checkpoint(
    path: str | Path,
    params: ModelParams,
    cfg: NetConfig,
    vocabulary: Sequence[str],
    idf: IdfTable | None = None,
    meta: dict | None = None,
) -> None:
    """JSON container: config echo, vocabulary and its hash, IDF weights, every tensor.

    Serialization is canonical (sorted keys, fixed separators) so that
    save -> load -> save reproduces the same bytes.
    """
    table = EmbeddingTable(list(vocabulary), params["embedding"].data)
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": cfg.to_dict(),
        "vocabulary": list(vocabulary),
        "vocab_hash": table.vocab_hash(),
        "idf": None if idf is None else {"n_docs": idf.n_docs, "weights": dict(sorted(idf.weights.items()))},
        "params": [{"name": n, **_encode(t.data)} for n, t in params.tensors.items()],
        "buffers": [{"name": n, **_encode(b)} for n, b in params.buffers.items()],
        "meta": meta or {},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n", encoding="utf-8")


@dataclass
class Checkpoint:
    params: ModelParams
    cfg: NetConfig
    table: EmbeddingTable
    idf: IdfTable | None
    meta: dict


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"unreadable checkpoint ({exc})", path=path) from None
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise ParseError("not an answer-select checkpoint", path=path)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint version {doc.get('version')!r}", path=path)
    try:
        cfg = NetConfig.from_dict(doc["config"])
        tensors = {e["name"]: parameter(_decode(e), e["name"]) for e in doc["params"]}
        buffers = {e["name"]: _decode(e) for e in doc["buffers"]}
        vocab = list(doc["vocabulary"])
        table = EmbeddingTable(vocab, tensors["embedding"].data.copy())
        idf = None
        if doc.get("idf") is not None:
            idf = IdfTable({k: float(v) for k, v in doc["idf"]["weights"].items()}, int(doc["idf"]["n_docs"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed checkpoint ({exc})", path=path) from None
    if table.vocab_hash() != doc.get("vocab_hash"):
        raise ParseError("vocabulary hash mismatch", path=path)
    params = ModelParams(tensors, buffers)
    expected = init_params(cfg, table)
    for name, t in expected.tensors.items():
        if name not in params.tensors or params[name].shape != t.shape:
            raise ConfigError(f"checkpoint tensor {name!r} does not match its config")
    if set(params.tensors) != set(expected.tensors) or set(buffers) != set(expected.buffers):
        raise ConfigError("checkpoint tensor names do not match its config")
    for name, b in expected.buffers.items():
        if buffers[name].shape != b.shape:
            raise ConfigError(f"checkpoint buffer {name!r} does not match its config")
    # keep the canonical order produced by init_params
    params = ModelParams({n: params.tensors[n] for n in expected.tensors}, {n: buffers[n] for n in expected.buffers})
    return Checkpoint(params, cfg, table, idf, doc.get("meta", {}))

