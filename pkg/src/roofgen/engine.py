"""Dense float64 tensors with reverse-mode autodiff and Adam.

Arrays are numpy; the graph is a per-result closure list. backward() walks
a topological order and accumulates into .grad until zero_grad. Everything
is deterministic: randomness enters only through explicitly passed
Generators (see rng_stream).
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import MissingGrad, ShapeError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return multiply(self, other)

    def __rmul__(self, other):
        return multiply(self, other)

    def __sub__(self, other):
        return add(self, multiply(other, -1.0))

    def __neg__(self):
        return multiply(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)

    def backward(self):
        """Accumulate d(self)/d(leaf) into .grad over the reachable graph."""
        if self.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {self.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:  # iterative DFS: graphs outgrow the recursion limit
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node._accumulate(g)
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] += pg
                else:
                    grads[id(parent)] = pg


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _needs_graph(*tensors: Tensor) -> bool:
    return any(t.requires_grad or t._parents for t in tensors)


def _make(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if _needs_graph(*parents):
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient over axes that were broadcast to produce g."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise and linear algebra ------------------------------------

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}")
    return _make(data, (a, b), lambda g: (
        _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def multiply(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"multiply: cannot broadcast {a.shape} with {b.shape}")
    return _make(data, (a, b), lambda g: (
        _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs matrices, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} vs {b.shape}")
    data = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(data, (a, b), backward)


def relu(x) -> Tensor:
    x = _wrap(x)
    mask = x.data > 0
    return _make(x.data * mask, (x,), lambda g: (g * mask,))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x) -> Tensor:
    """tanh-approximation GELU; smooth, so finite differences agree."""
    x = _wrap(x)
    u = _GELU_C * (x.data + 0.044715 * x.data ** 3)
    t = np.tanh(u)
    data = 0.5 * x.data * (1.0 + t)

    def backward(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x.data ** 2)
        dt = (1.0 - t ** 2) * du
        return (g * (0.5 * (1.0 + t) + 0.5 * x.data * dt),)

    return _make(data, (x,), backward)


def softmax(x, axis: int = -1) -> Tensor:
    x = _wrap(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - inner),)

    return _make(y, (x,), backward)


def layer_norm(x, gain, bias, axis: int = -1, eps: float = 1e-5) -> Tensor:
    x, gain, bias = _wrap(x), _wrap(gain), _wrap(bias)
    mu = x.data.mean(axis=axis, keepdims=True)
    centered = x.data - mu
    var = (centered ** 2).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    data = xhat * gain.data + bias.data
    n = x.data.shape[axis]

    def backward(g):
        gxhat = g * gain.data
        gvar = (gxhat * centered).sum(axis=axis, keepdims=True) * (-0.5) * inv ** 3
        gmu = (-gxhat * inv).sum(axis=axis, keepdims=True) + gvar * (
            -2.0 * centered.mean(axis=axis, keepdims=True))
        gx = gxhat * inv + gvar * 2.0 * centered / n + gmu / n
        ggain = _unbroadcast(g * xhat, gain.shape)
        gbias = _unbroadcast(g, bias.shape)
        return gx, ggain, gbias

    return _make(data, (x, gain, bias), backward)


def embedding_lookup(table, indices) -> Tensor:
    table = _wrap(table)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError(
            f"index out of range for table with {table.shape[0]} rows")
    data = table.data[idx]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _make(data, (table,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(data, tuple(tensors), backward)


def slice_(x, key) -> Tensor:
    x = _wrap(x)
    data = x.data[key]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, key, g)
        return (gx,)

    return _make(data, (x,), backward)


def reshape(x, shape) -> Tensor:
    x = _wrap(x)
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x, axes) -> Tensor:
    x = _wrap(x)
    inverse = np.argsort(axes)
    return _make(x.data.transpose(axes), (x,),
                 lambda g: (g.transpose(inverse),))


def sum_(x, axis=None) -> Tensor:
    x = _wrap(x)
    data = x.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _make(data, (x,), backward)


def mean_(x) -> Tensor:
    x = _wrap(x)
    return multiply(sum_(x), 1.0 / x.size)


def dropout(x, rate: float, train: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: survivors scaled by 1/(1-rate); identity in eval."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = _wrap(x)
    if not train or rate == 0.0:
        return _make(x.data, (x,), lambda g: (g,))
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _make(x.data * mask, (x,), lambda g: (g * mask,))


def cross_entropy(logits, targets, ignore_index: int | None = None) -> Tensor:
    """Mean negative log-likelihood over non-ignored target positions."""
    logits = _wrap(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.data.ndim < 2 or targets.shape != logits.shape[:-1]:
        raise ShapeError(
            f"cross_entropy: targets {targets.shape} do not match logits {logits.shape}")
    flat = logits.data.reshape(-1, logits.shape[-1])
    tflat = targets.reshape(-1)
    valid = np.ones_like(tflat, dtype=bool)
    if ignore_index is not None:
        valid = tflat != ignore_index
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ShapeError("cross_entropy: every position is ignored")
    safe_t = np.where(valid, tflat, 0)
    if safe_t.min() < 0 or safe_t.max() >= flat.shape[1]:
        raise ShapeError("cross_entropy: target id outside vocabulary")

    shifted = flat - flat.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    nll = -(logp[np.arange(len(tflat)), safe_t])
    loss = float((nll * valid).sum() / n_valid)

    def backward(g):
        probs = np.exp(logp)
        probs[np.arange(len(tflat)), safe_t] -= 1.0
        probs *= (valid / n_valid)[:, None]
        return (float(g) * probs.reshape(logits.shape),)

    return _make(np.asarray(loss), (logits,), backward)


# -- convolution (im2col) ----------------------------------------------

_COL_INDEX_CACHE: dict[tuple, tuple] = {}


def _col_indices(h, w, kh, kw, stride, pad):
    key = (h, w, kh, kw, stride, pad)
    if key not in _COL_INDEX_CACHE:
        oh = (h + 2 * pad - kh) // stride + 1
        ow = (w + 2 * pad - kw) // stride + 1
        rows = (np.arange(oh) * stride)[:, None, None, None] + np.arange(kh)[None, None, :, None]
        cols = (np.arange(ow) * stride)[None, :, None, None] + np.arange(kw)[None, None, None, :]
        rows = np.broadcast_to(rows, (oh, ow, kh, kw)).reshape(-1)
        cols = np.broadcast_to(cols, (oh, ow, kh, kw)).reshape(-1)
        _COL_INDEX_CACHE[key] = (oh, ow, rows, cols)
    return _COL_INDEX_CACHE[key]


def conv2d(x, weight, bias=None, stride: int = 1, pad: int = 0) -> Tensor:
    """x (B, C, H, W) * weight (O, C, KH, KW) -> (B, O, OH, OW)."""
    x, weight = _wrap(x), _wrap(weight)
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError(f"conv2d needs 4-d input/weight, got {x.shape}, {weight.shape}")
    b_, c, h, w = x.shape
    o, c2, kh, kw = weight.shape
    if c != c2:
        raise ShapeError(f"conv2d: channel mismatch, input {c} vs weight {c2}")
    oh, ow, rows, cols = _col_indices(h, w, kh, kw, stride, pad)

    padded = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    # columns: (B, OH*OW, C*KH*KW)
    col = padded[:, :, rows, cols].reshape(b_, c, oh * ow, kh * kw)
    col = col.transpose(0, 2, 1, 3).reshape(b_, oh * ow, c * kh * kw)
    wmat = weight.data.reshape(o, c * kh * kw).T
    out = (col @ wmat).transpose(0, 2, 1).reshape(b_, o, oh, ow)
    if bias is not None:
        bias = _wrap(bias)
        out = out + bias.data[None, :, None, None]

    def backward(g):
        gout = g.reshape(b_, o, oh * ow).transpose(0, 2, 1)  # (B, P, O)
        gw = np.einsum("bpk,bpo->ok", col, gout).reshape(weight.shape)
        gcol = gout @ wmat.T  # (B, P, C*KH*KW)
        gcol = gcol.reshape(b_, oh * ow, c, kh * kw).transpose(0, 2, 1, 3)
        gcol = gcol.reshape(b_, c, -1)
        gpad = np.zeros_like(padded)
        np.add.at(gpad, (slice(None), slice(None), rows, cols),
                  gcol)
        gx = gpad[:, :, pad : pad + h, pad : pad + w] if pad else gpad
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, backward)


# -- optimizer ----------------------------------------------------------

@dataclass
class AdamState:
    """Adam with bias correction over a named parameter dict."""

    learning_rate: float = 2e-5
    beta1: float = 0.9
    beta2: float = 0.99
    epsilon: float = 1e-8
    step: int = 0
    moments: dict = field(default_factory=dict)  # name -> (m, v)


def adam_step(params: dict[str, Tensor], state: AdamState) -> None:
    state.step += 1
    t = state.step
    for name, p in params.items():
        if p.grad is None:
            raise MissingGrad(f"parameter {name!r} has no gradient")
        if name not in state.moments:
            state.moments[name] = (np.zeros_like(p.data), np.zeros_like(p.data))
        m, v = state.moments[name]
        g = p.grad
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        mhat = m / (1.0 - state.beta1 ** t)
        vhat = v / (1.0 - state.beta2 ** t)
        p.data -= state.learning_rate * mhat / (np.sqrt(vhat) + state.epsilon)


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.zero_grad()


# -- deterministic rng streams -------------------------------------------

def rng_stream(seed: int, *key) -> np.random.Generator:
    """PCG64 stream derived from (seed, key parts); strings hash stably."""
    parts = [int(seed)]
    for k in key:
        if isinstance(k, str):
            parts.append(int.from_bytes(k.encode()[:8].ljust(8, b"\0"), "little"))
        else:
            parts.append(int(k))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(parts)))


# -- checkpoint format ----------------------------------------------------
# one JSON header line (names, shapes, metadata), then each tensor's raw
# little-endian float64 payload in header order

def save_checkpoint(path, params: dict[str, Tensor], meta: dict | None = None) -> None:
    names = list(params.keys())
    header = {
        "format": "roofgen-checkpoint-v1",
        "tensors": [{"name": n, "shape": list(params[n].shape)} for n in names],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(params[n].data, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header.get("format") != "roofgen-checkpoint-v1":
            raise ValueError(f"not a roofgen checkpoint: {path}")
        params: dict[str, Tensor] = {}
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            arr = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
            params[spec["name"]] = Tensor(arr.copy(), requires_grad=True)
    return params, header["meta"]
