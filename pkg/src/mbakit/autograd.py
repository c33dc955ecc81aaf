"""Reverse-mode automatic differentiation over dense float64 arrays.

A small dynamic tape in the micrograd tradition, but with numpy arrays as
the payload: each primitive computes its forward value eagerly and records
a closure that maps the output gradient to per-parent gradients.
``backward`` walks the tape in reverse topological order and accumulates.

Everything is float64.  The models built on top are tiny, so the priority
is gradient-check-grade numerics, not speed; the heavy lifting inside each
primitive is still delegated to numpy.
"""

from __future__ import annotations

import json
import math
import struct
from contextlib import contextmanager

import numpy as np

from .errors import CheckpointError, ShapeError

__all__ = [
    "Tensor",
    "ParamStore",
    "no_grad",
    "backward",
    "matmul",
    "add",
    "mul",
    "scale",
    "concat",
    "reshape",
    "transpose",
    "embedding",
    "softmax",
    "layer_norm",
    "relu",
    "masked_fill",
    "dropout",
    "cross_entropy",
    "tensor_sum",
    "grad_check",
    "adam_state",
    "adam_step",
    "clip_grad_norm",
    "save_checkpoint",
    "load_checkpoint",
]

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the context (inference, finite diffs)."""
    global _grad_enabled
    saved = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = saved


class Tensor:
    """A dense float64 array plus an optional gradient slot.

    ``grad`` is None until ``backward`` first reaches the tensor; treat a
    missing gradient as zero.  Tensors created inside :func:`no_grad`, or
    from parents that do not require gradients, record nothing.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad) and _grad_enabled
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def grad_or_zero(self) -> np.ndarray:
        return self.grad if self.grad is not None else np.zeros_like(self.data)

    def sum(self) -> "Tensor":
        return tensor_sum(self)

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, shape if len(shape) != 1 else shape[0])

    def transpose(self, axes=None) -> "Tensor":
        return transpose(self, axes)

    def backward(self) -> None:
        backward(self)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return add(self, scale(other, -1.0))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, key) -> "Tensor":
        return _getitem(self, key)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"


def _make(out_data, parents, backward_fn) -> Tensor:
    out = Tensor(out_data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape``, undoing numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy's leading-dimension broadcasting."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = a.data @ b.data

    def bw(g):
        ga = _unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape)
        gb = _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape)
        return ga, gb

    return _make(out, (a, b), bw)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum with broadcasting."""
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}") from None
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with broadcasting."""
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}") from None

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out, (a, b), bw)


def scale(t: Tensor, s: float) -> Tensor:
    s = float(s)
    return _make(t.data * s, (t,), lambda g: (g * s,))


def concat(tensors, axis: int) -> Tensor:
    """Concatenate along ``axis``; gradient splits back by the input sizes."""
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat: empty input list")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"concat: incompatible shapes {shapes}") from None
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tensors, bw)


def _getitem(t: Tensor, key) -> Tensor:
    out = t.data[key]

    def bw(g):
        gt = np.zeros_like(t.data)
        gt[key] += g
        return (gt,)

    return _make(out, (t,), bw)


def reshape(t: Tensor, shape) -> Tensor:
    try:
        out = t.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {t.shape} as {shape}") from None
    return _make(out, (t,), lambda g: (g.reshape(t.shape),))


def transpose(t: Tensor, axes=None) -> Tensor:
    out = np.transpose(t.data, axes)
    inverse = None if axes is None else np.argsort(axes)
    return _make(out, (t,), lambda g: (np.transpose(g, inverse),))


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup ``table[ids]``; ``ids`` is a plain integer array."""
    ids = np.asarray(ids)
    if table.ndim != 2:
        raise ShapeError(f"embedding: table must be 2-d, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding: id out of range for table {table.shape}")
    out = table.data[ids]

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _make(out, (table,), bw)


def softmax(t: Tensor) -> Tensor:
    """Softmax over the last axis."""
    shifted = t.data - t.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _make(out, (t,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit variance, then apply
    the elementwise affine ``gain * xhat + bias``."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm: affine shapes {gain.shape}/{bias.shape} do not match last axis {d}"
        )
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * gain.data + bias.data

    def bw(g):
        dxhat = g * gain.data
        term = d * dxhat - dxhat.sum(axis=-1, keepdims=True)
        term -= xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        gx = inv / d * term
        axes = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return _make(out, (x, gain, bias), bw)


def relu(t: Tensor) -> Tensor:
    out = np.maximum(t.data, 0.0)
    return _make(out, (t,), lambda g: (g * (t.data > 0.0),))


def masked_fill(t: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where ``mask`` is true by ``value`` (no gradient
    flows through filled positions).  ``mask`` must broadcast to ``t``."""
    try:
        mask_b = np.broadcast_to(np.asarray(mask, dtype=bool), t.shape)
    except ValueError:
        raise ShapeError(
            f"masked_fill: mask shape {np.shape(mask)} does not broadcast to {t.shape}"
        ) from None
    out = np.where(mask_b, float(value), t.data)
    return _make(out, (t,), lambda g: (np.where(mask_b, 0.0, g),))


def dropout(t: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout with keep-scaling; ``p = 0`` is the identity."""
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    if p == 0.0:
        return t
    keep = (rng.random(t.shape) >= p) / (1.0 - p)
    return _make(t.data * keep, (t,), lambda g: (g * keep,))


def cross_entropy(logits: Tensor, targets: np.ndarray, ignore_index: int = -1) -> Tensor:
    """Mean negative log-softmax of ``targets`` over non-ignored rows.

    ``logits`` is [N, V]; ``targets`` holds class indices in [0, V) or
    ``ignore_index``.  Gradient is ``(softmax - onehot) / n`` per kept row.
    """
    targets = np.asarray(targets)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeError(
            f"cross_entropy: logits {logits.shape} vs targets {targets.shape}"
        )
    v = logits.shape[1]
    keep = targets != ignore_index
    kept = targets[keep]
    if kept.size and (kept.min() < 0 or kept.max() >= v):
        raise ValueError(f"cross_entropy: target index out of range [0, {v})")

    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - logsumexp
    n = max(int(keep.sum()), 1)
    rows = np.nonzero(keep)[0]
    loss = -logp[rows, targets[rows]].sum() / n

    def bw(g):
        gl = np.exp(logp)  # softmax
        gl[rows, targets[rows]] -= 1.0
        gl[~keep] = 0.0
        return (gl * (float(g) / n),)

    return _make(loss, (logits,), bw)


def tensor_sum(t: Tensor) -> Tensor:
    """Sum of all entries, as a scalar tensor."""
    return _make(t.data.sum(), (t,), lambda g: (np.broadcast_to(g, t.shape).copy(),))


# ---------------------------------------------------------------------------
# Backward pass


def backward(loss: Tensor) -> None:
    """Populate gradients of every requires-grad tensor reachable from
    ``loss``; contributions along multiple paths accumulate."""
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward_fn is None or node.grad is None:
            continue
        grads = node._backward_fn(node.grad)
        for parent, g in zip(node._parents, grads):
            if not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.array(g, dtype=np.float64, copy=True)
            else:
                parent.grad += g


# ---------------------------------------------------------------------------
# Parameters, optimizer, checkpointing


class ParamStore:
    """Ordered, uniquely named collection of trainable tensors."""

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}

    def add(self, name: str, data) -> Tensor:
        if name in self._tensors:
            raise ValueError(f"duplicate parameter name: {name}")
        t = data if isinstance(data, Tensor) else Tensor(data)
        t.requires_grad = True
        self._tensors[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self):
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def n_values(self) -> int:
        return sum(t.data.size for t in self._tensors.values())


def adam_state(params: ParamStore) -> dict:
    """Fresh first/second-moment accumulators for :func:`adam_step`."""
    return {
        "step": 0,
        "m": {n: np.zeros_like(t.data) for n, t in params.items()},
        "v": {n: np.zeros_like(t.data) for n, t in params.items()},
    }


def adam_step(
    params: ParamStore,
    state: dict,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update in place; missing gradients count as
    zero."""
    state["step"] += 1
    t = state["step"]
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, p in params.items():
        g = p.grad if p.grad is not None else 0.0
        m = state["m"][name]
        v = state["v"][name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def clip_grad_norm(params: ParamStore, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``;
    returns the pre-clip norm."""
    total = 0.0
    for _, p in params.items():
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    total = math.sqrt(total)
    if total > max_norm:
        factor = max_norm / (total + 1e-12)
        for _, p in params.items():
            if p.grad is not None:
                p.grad *= factor
    return total


def grad_check(
    f,
    params: ParamStore,
    eps: float = 1e-5,
    max_coords: int = 200,
    seed: int = 0,
) -> float:
    """Max relative error between autodiff and central-difference gradients.

    ``f(params)`` must return a scalar Tensor and be deterministic.  The
    error on a coordinate is |a - b| / max(|a|, |b|, 1e-8); at most
    ``max_coords`` coordinates are probed, sampled deterministically from
    ``seed``.
    """
    params.zero_grad()
    loss = f(params)
    backward(loss)
    analytic = {n: t.grad_or_zero().copy() for n, t in params.items()}

    coords = [(n, i) for n, t in params.items() for i in range(t.data.size)]
    if len(coords) > max_coords:
        rng = np.random.default_rng(seed)
        picks = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in sorted(picks)]

    worst = 0.0
    for name, idx in coords:
        flat = params[name].data.reshape(-1)
        saved = flat[idx]
        with no_grad():
            flat[idx] = saved + eps
            hi = float(f(params).data)
            flat[idx] = saved - eps
            lo = float(f(params).data)
        flat[idx] = saved
        fd = (hi - lo) / (2.0 * eps)
        a = float(analytic[name].reshape(-1)[idx])
        worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), 1e-8))
    return worst


_MAGIC = b"MBCK"
_VERSION = 1


def save_checkpoint(path, params: ParamStore, meta: dict | None = None) -> None:
    """Write parameters as a versioned binary container: a JSON header with
    names/shapes followed by raw little-endian float64 payloads."""
    header = {
        "format": "mbakit-checkpoint",
        "version": _VERSION,
        "meta": meta or {},
        "tensors": [{"name": n, "shape": list(t.data.shape)} for n, t in params.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, t in params.items():
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[ParamStore, dict]:
    """Inverse of :func:`save_checkpoint`; bit-exact for the stored values."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if len(raw) < 8:
        raise CheckpointError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<I", raw[4:8])
    try:
        header = json.loads(raw[8 : 8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: bad header ({exc})") from None
    if header.get("version") != _VERSION:
        raise CheckpointError(f"{path}: unsupported version {header.get('version')!r}")
    params = ParamStore()
    offset = 8 + hlen
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(raw):
            raise CheckpointError(f"{path}: truncated payload at {entry['name']!r}")
        values = np.frombuffer(raw[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
        params.add(entry["name"], values)
        offset = end
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return params, header.get("meta", {})
