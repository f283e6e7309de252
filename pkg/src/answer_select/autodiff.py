"""Minimal dense-tensor engine with reverse-mode gradients.

Only the operations the matching network needs are provided.  Every
operation works on float64 numpy arrays and records a backward rule when
at least one input requires a gradient.  Spatial operations accept either
a single ``c x H x W`` map or a batch ``N x c x H x W``.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DegenerateInputError, DimensionError, StateError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

# Names of operations whose backward rule is deliberately corrupted; used by
# the gradient-check negative control only.
_FAULTS: set[str] = set()


class Tensor:
    """A float64 array plus an optional gradient and graph node."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self._op: str | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def op(self) -> str | None:
        return self._op

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, op={self._op})"


def parameter(data, name: str | None = None) -> Tensor:
    """Leaf tensor that receives gradients."""
    return Tensor(data, requires_grad=True, name=name)


def record(data: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn, op: str) -> Tensor:
    """Wrap ``data`` as the output of ``op`` applied to ``parents``.

    ``backward_fn`` maps the output gradient to one gradient (or ``None``)
    per parent, in order.
    """
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class ComputeGraph:
    """Nodes reachable from an output, in topological order (inputs first)."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, output: Tensor) -> "ComputeGraph":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen and parent.requires_grad:
                    stack.append((parent, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> list[np.ndarray] | None:
    """Propagate d(loss)/d(node) to every leaf that requires a gradient.

    Leaf ``.grad`` buffers are overwritten, not accumulated across calls.
    When ``params`` is given, their gradients are also returned in order;
    parameters the loss does not depend on get zeros.
    """
    if loss.data.size != 1:
        raise DimensionError(f"loss must be a scalar, got shape {loss.shape}")
    if loss._backward is None:
        raise StateError("backward called on a tensor with no recorded forward pass")

    graph = ComputeGraph.from_output(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g = grads.pop(id(node), None)
        if node._backward is None:
            if node.requires_grad:
                node.grad = g if g is not None else np.zeros_like(node.data)
            continue
        if g is None:
            continue
        parent_grads = node._backward(g)
        if node._op in _FAULTS:
            parent_grads = [None if pg is None else 1.5 * pg for pg in parent_grads]
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg

    if params is None:
        return None
    out = []
    reached = {id(n) for n in graph.nodes}
    for p in params:
        if id(p) not in reached or p.grad is None:
            p.grad = np.zeros_like(p.data)
        out.append(p.grad)
    return out


@contextlib.contextmanager
def inject_fault(op: str):
    """Corrupt the backward rule of ``op`` (scales its gradients by 1.5)."""
    _FAULTS.add(op)
    try:
        yield
    finally:
        _FAULTS.discard(op)


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} differ")
    return record(a.data + b.data, (a, b), lambda g: (g, g), "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} differ")
    return record(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    return record(a.data * c, (a,), lambda g: (g * c,), "scale")


def sum_all(a: Tensor) -> Tensor:
    return record(np.array(a.data.sum()), (a,), lambda g: (np.full_like(a.data, g),), "sum")


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    return record(np.array(a.data.mean()), (a,), lambda g: (np.full_like(a.data, g / n),), "mean")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    return record(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def _back(g):
        return np.split(g, bounds, axis=axis)

    return record(np.concatenate([t.data for t in tensors], axis=axis), tensors, _back, "concat")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return record(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(x: Tensor) -> Tensor:
    # split by sign to avoid overflow in exp
    z = x.data
    y = np.empty_like(z)
    pos = z >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    y[~pos] = ez / (1.0 + ez)
    return record(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def embedding(table: Tensor, ids: np.ndarray, pad_index: int | None = 0) -> Tensor:
    """Row lookup; the ``pad_index`` row never receives gradient."""
    ids = np.asarray(ids, dtype=np.int64)
    vocab, _ = table.shape
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise DimensionError(f"embedding: ids outside [0, {vocab})")

    def _back(g):
        dt = np.zeros_like(table.data)
        np.add.at(dt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        if pad_index is not None:
            dt[pad_index] = 0.0
        return (dt,)

    return record(table.data[ids], (table,), _back, "embedding")


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


def _batched(x: Tensor, op: str) -> tuple[np.ndarray, bool]:
    if x.data.ndim == 3:
        return x.data[None], True
    if x.data.ndim == 4:
        return x.data, False
    raise DimensionError(f"{op}: expected c x H x W or N x c x H x W input, got shape {x.shape}")


def conv2d(x: Tensor, filters: Tensor, bias: Tensor) -> Tensor:
    """Narrow (valid) cross-correlation, stride 1, no kernel flip."""
    xd, single = _batched(x, "conv2d")
    if filters.data.ndim != 4:
        raise DimensionError(f"conv2d: filters must be n x c x h x w, got {filters.shape}")
    n, c, kh, kw = filters.shape
    N, cin, H, W = xd.shape
    if cin != c:
        raise DimensionError(f"conv2d: channel axis mismatch, input has {cin}, filters expect {c}")
    if bias.shape != (n,):
        raise DimensionError(f"conv2d: bias axis mismatch, expected ({n},), got {bias.shape}")
    if kh > H or kw > W:
        raise DegenerateInputError(f"conv2d: kernel {kh}x{kw} larger than input {H}x{W}")
    Ho, Wo = H - kh + 1, W - kw + 1
    F = filters.data.reshape(n, c * kh * kw)

    # im2col: one row per output position, columns ordered (c, kh, kw) like F
    windows = sliding_window_view(xd, (kh, kw), axis=(2, 3))
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(N * Ho * Wo, c * kh * kw)
    out = (cols @ F.T + bias.data).reshape(N, Ho, Wo, n).transpose(0, 3, 1, 2)

    def _back(g):
        g4 = g[None] if single else g
        g2 = g4.transpose(0, 2, 3, 1).reshape(N * Ho * Wo, n)
        dF = (g2.T @ cols).reshape(filters.shape)
        dcols = (g2 @ F).reshape(N, Ho, Wo, c, kh, kw)
        dx = np.zeros_like(xd)
        for di in range(kh):
            for dj in range(kw):
                dx[:, :, di:di + Ho, dj:dj + Wo] += dcols[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
        db = g2.sum(axis=0)
        return (dx[0] if single else dx, dF, db)

    return record(out[0] if single else out, (x, filters, bias), _back, "conv2d")


def avg_pool2d(x: Tensor, window: tuple[int, int] | None = None, stride: tuple[int, int] | None = None) -> Tensor:
    """Mean over each window.  ``window=None`` pools the whole map to 1x1."""
    xd, single = _batched(x, "avg_pool2d")
    N, c, H, W = xd.shape
    ph, pw = (H, W) if window is None else window
    sh, sw = (ph, pw) if stride is None else stride
    if sh <= 0 or sw <= 0:
        raise ConfigError(f"avg_pool2d: stride must be positive, got {(sh, sw)}")
    if ph <= 0 or pw <= 0 or ph > H or pw > W:
        raise DegenerateInputError(f"avg_pool2d: window {ph}x{pw} does not fit input {H}x{W}")
    Ho, Wo = (H - ph) // sh + 1, (W - pw) // sw + 1
    windows = sliding_window_view(xd, (ph, pw), axis=(2, 3))[:, :, ::sh, ::sw]
    out = windows.mean(axis=(-2, -1))
    area = float(ph * pw)

    def _back(g):
        g4 = g[None] if single else g
        dx = np.zeros_like(xd)
        share = g4 / area
        for di in range(ph):
            for dj in range(pw):
                dx[:, :, di:di + sh * (Ho - 1) + 1:sh, dj:dj + sw * (Wo - 1) + 1:sw] += share
        return (dx[0] if single else dx,)

    return record(out[0] if single else out, (x,), _back, "avg_pool2d")


def affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``weight @ x + bias`` for a vector, or row-wise for an ``N x m`` batch."""
    if weight.data.ndim != 2:
        raise DimensionError(f"affine: weight must be p x m, got {weight.shape}")
    p, m = weight.shape
    if x.shape[-1] != m:
        raise DimensionError(f"affine: input axis has {x.shape[-1]} features, weight expects {m}")
    if bias.shape != (p,):
        raise DimensionError(f"affine: bias must have shape ({p},), got {bias.shape}")
    out = x.data @ weight.data.T + bias.data

    def _back(g):
        if x.data.ndim == 1:
            return (g @ weight.data, np.outer(g, x.data), g)
        return (g @ weight.data, g.T @ x.data, g.sum(axis=0))

    return record(out, (x, weight, bias), _back, "affine")


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    eps: float = 1e-5,
    momentum: float = 0.9,
) -> Tensor:
    """Per-channel normalization over batch and spatial axes.

    Accepts ``N x c x H x W`` or ``N x c``.  In training mode batch
    statistics are used and ``running_mean``/``running_var`` are updated in
    place: ``running = momentum * running + (1 - momentum) * batch`` with the
    unbiased batch variance.
    """
    xd = x.data
    if xd.ndim not in (2, 4):
        raise DimensionError(f"batch_norm: expected N x c or N x c x H x W, got {x.shape}")
    c = xd.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batch_norm: channel axis has {c} entries, gamma/beta are {gamma.shape}/{beta.shape}")
    axes = (0,) if xd.ndim == 2 else (0, 2, 3)
    bshape = (1, c) if xd.ndim == 2 else (1, c, 1, 1)

    if training:
        if xd.shape[0] < 2:
            raise ConfigError("batch_norm: training mode needs a batch of at least 2")
        m = xd.size // c
        mu = xd.mean(axis=axes)
        centered = xd - mu.reshape(bshape)
        var = (centered * centered).mean(axis=axes)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = centered * inv_std.reshape(bshape)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu
        running_var *= momentum
        running_var += (1.0 - momentum) * var * (m / (m - 1))
    else:
        if running_mean is None or running_var is None:
            raise StateError("batch_norm: inference mode needs running statistics")
        inv_std = 1.0 / np.sqrt(running_var + eps)
        xhat = (xd - running_mean.reshape(bshape)) * inv_std.reshape(bshape)

    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    def _back(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * gamma.data.reshape(bshape)
        if training:
            mean_dxhat = dxhat.mean(axis=axes).reshape(bshape)
            mean_dxhat_xhat = (dxhat * xhat).mean(axis=axes).reshape(bshape)
            dx = (dxhat - mean_dxhat - xhat * mean_dxhat_xhat) * inv_std.reshape(bshape)
        else:
            dx = dxhat * inv_std.reshape(bshape)
        return (dx, dgamma, dbeta)

    return record(out, (x, gamma, beta), _back, "batch_norm")


def dropout(x: Tensor, rate: float, seed=None, training: bool = True) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1 / (1 - rate)``."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return record(x.data * mask, (x,), lambda g: (g * mask,), "dropout")
