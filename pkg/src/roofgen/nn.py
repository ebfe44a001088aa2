"""Transformer building blocks on the autodiff engine.

Parameters live in a flat name -> Tensor dict so checkpoints, Adam and the
gradient checker can treat the model uniformly. Initialization is
scaled-normal (0.02) from a named deterministic stream per parameter.
"""

from __future__ import annotations

import numpy as np

from . import engine
from .engine import Tensor

INIT_SCALE = 0.02

NEG_INF = -1e9  # additive attention mask value; keeps softmax finite


class ParamStore:
    """Flat parameter dict with deterministic named initialization.

    Embedding-style tables use the flat 0.02 scale; weight matrices use
    fan-in scaling so deep stacks neither attenuate nor blow up signals.
    """

    def __init__(self, seed: int):
        self.seed = seed
        self.params: dict[str, Tensor] = {}

    def normal(self, name: str, *shape, std: float = INIT_SCALE) -> Tensor:
        if name not in self.params:
            rng = engine.rng_stream(self.seed, "init", name)
            self.params[name] = Tensor(
                rng.normal(scale=std, size=shape), requires_grad=True)
        return self.params[name]

    def fan_in(self, name: str, fan_in: int, *shape) -> Tensor:
        return self.normal(name, *shape, std=1.0 / np.sqrt(fan_in))

    def constant(self, name: str, value: float, *shape) -> Tensor:
        if name not in self.params:
            self.params[name] = Tensor(
                np.full(shape, float(value)), requires_grad=True)
        return self.params[name]


INIT_RECIPE = "weights normal(1/sqrt(fan_in)), embeddings normal(0.02), stream per name"


def linear(store: ParamStore, name: str, x: Tensor, d_in: int, d_out: int,
           bias: bool = True) -> Tensor:
    w = store.fan_in(f"{name}.w", d_in, d_in, d_out)
    out = engine.matmul(x, w)
    if bias:
        out = engine.add(out, store.constant(f"{name}.b", 0.0, d_out))
    return out


def layer_norm(store: ParamStore, name: str, x: Tensor, dim: int) -> Tensor:
    gain = store.constant(f"{name}.gain", 1.0, dim)
    bias = store.constant(f"{name}.bias", 0.0, dim)
    return engine.layer_norm(x, gain, bias)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, l, d = x.shape
    x = engine.reshape(x, (b, l, heads, d // heads))
    return engine.transpose(x, (0, 2, 1, 3))  # (B, H, L, dh)


def _merge_heads(x: Tensor) -> Tensor:
    b, h, l, dh = x.shape
    return engine.reshape(engine.transpose(x, (0, 2, 1, 3)), (b, l, h * dh))


def attention(store: ParamStore, name: str, x_q: Tensor, x_kv: Tensor,
              dim: int, heads: int, mask: np.ndarray | None = None) -> Tensor:
    """Multi-head attention; mask is additive over scores (B?, 1, Lq?, Lk)."""
    q = _split_heads(linear(store, f"{name}.q", x_q, dim, dim, bias=False), heads)
    k = _split_heads(linear(store, f"{name}.k", x_kv, dim, dim, bias=False), heads)
    v = _split_heads(linear(store, f"{name}.v", x_kv, dim, dim, bias=False), heads)
    scale = 1.0 / np.sqrt(dim // heads)
    scores = engine.multiply(engine.matmul(q, engine.transpose(k, (0, 1, 3, 2))), scale)
    if mask is not None:
        scores = engine.add(scores, mask)
    attn = engine.softmax(scores, axis=-1)
    out = _merge_heads(engine.matmul(attn, v))
    return linear(store, f"{name}.o", out, dim, dim, bias=False)


def feed_forward(store: ParamStore, name: str, x: Tensor, dim: int,
                 hidden: int) -> Tensor:
    h = engine.gelu(linear(store, f"{name}.up", x, dim, hidden))
    return linear(store, f"{name}.down", h, hidden, dim)


def transformer_block(store: ParamStore, name: str, x: Tensor, dim: int,
                      heads: int, ff_dim: int,
                      self_mask: np.ndarray | None = None,
                      cross: Tensor | None = None,
                      cross_mask: np.ndarray | None = None,
                      drop: float = 0.0, train: bool = False,
                      rng: np.random.Generator | None = None) -> Tensor:
    """Pre-norm block: self-attention, optional cross-attention, feed-forward."""

    def maybe_drop(t: Tensor) -> Tensor:
        if train and drop > 0.0:
            return engine.dropout(t, drop, train, rng)
        return t

    normed = layer_norm(store, f"{name}.ln1", x, dim)
    h = attention(store, f"{name}.self", normed, normed, dim, heads, self_mask)
    x = engine.add(x, maybe_drop(h))
    if cross is not None:
        h = attention(store, f"{name}.cross",
                      layer_norm(store, f"{name}.ln2", x, dim),
                      cross, dim, heads, cross_mask)
        x = engine.add(x, maybe_drop(h))
    h = feed_forward(store, f"{name}.ff",
                     layer_norm(store, f"{name}.ln3", x, dim), dim, ff_dim)
    return engine.add(x, maybe_drop(h))


_CAUSAL_CACHE: dict[int, np.ndarray] = {}


def causal_mask(length: int) -> np.ndarray:
    """(1, 1, L, L) additive mask: position t sees positions <= t."""
    if length not in _CAUSAL_CACHE:
        m = np.triu(np.full((length, length), NEG_INF), k=1)
        _CAUSAL_CACHE[length] = m[None, None, :, :]
    return _CAUSAL_CACHE[length]


def key_padding_mask(valid: np.ndarray) -> np.ndarray:
    """(B, 1, 1, Lk) additive mask from a boolean validity array (B, Lk)."""
    return np.where(valid[:, None, None, :], 0.0, NEG_INF)
