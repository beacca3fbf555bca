"""Building blocks shared across the encoder and decoder."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, is_dataclass
from functools import lru_cache
from typing import Iterator

import numpy as np

from .numkit import ops
from .numkit.rng import Rng
from .numkit.tensor import Tensor


def parameters(obj) -> Iterator[Tensor]:
    """Yield every trainable tensor reachable through dataclasses, lists and dicts."""
    if isinstance(obj, Tensor):
        if obj.requires_grad:
            yield obj
    elif is_dataclass(obj):
        for f in fields(obj):
            yield from parameters(getattr(obj, f.name))
    elif isinstance(obj, (list, tuple)):
        for item in obj:
            yield from parameters(item)
    elif isinstance(obj, dict):
        for item in obj.values():
            yield from parameters(item)


def named_parameters(obj, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    if isinstance(obj, Tensor):
        if obj.requires_grad:
            yield prefix, obj
    elif is_dataclass(obj):
        for f in fields(obj):
            yield from named_parameters(getattr(obj, f.name), f"{prefix}.{f.name}" if prefix else f.name)
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from named_parameters(item, f"{prefix}.{i}")
    elif isinstance(obj, dict):
        for k, item in obj.items():
            yield from named_parameters(item, f"{prefix}.{k}")


def ones(n: int, name: str | None = None) -> Tensor:
    return Tensor(np.ones(n), requires_grad=True, name=name)


def zeros(shape, name: str | None = None) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


@dataclass
class AttentionParams:
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor

    @classmethod
    def init(cls, rng: Rng, c: int, std: float = 0.02) -> "AttentionParams":
        return cls(*(rng.param((c, c), std, n) for n in ("w_q", "w_k", "w_v", "w_o")))


@dataclass
class FeedForwardParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, rng: Rng, c: int, hidden: int, std: float = 0.02) -> "FeedForwardParams":
        return cls(rng.param((c, hidden), std, "w1"), zeros(hidden, "b1"),
                   rng.param((hidden, c), std, "w2"), zeros(c, "b2"))


@dataclass
class NormParams:
    weight: Tensor
    bias: Tensor

    @classmethod
    def init(cls, c: int) -> "NormParams":
        return cls(ones(c, "norm_w"), zeros(c, "norm_b"))


def layer_norm(x, p: NormParams | None) -> Tensor:
    return x if p is None else ops.layer_norm(x, p.weight, p.bias)


def feed_forward(x, p: FeedForwardParams) -> Tensor:
    h = ops.relu(ops.add(ops.matmul(x, p.w1), p.b1))
    return ops.add(ops.matmul(h, p.w2), p.b2)


def split_heads(x: Tensor, heads: int) -> Tensor:
    """``(..., N, c)`` -> ``(..., heads, N, c/heads)``."""
    *lead, n, c = x.shape
    x = ops.reshape(x, (*lead, n, heads, c // heads))
    k = len(lead)
    return ops.transpose(x, (*range(k), k + 1, k, k + 2))


def merge_heads(x: Tensor) -> Tensor:
    *lead, heads, n, ch = x.shape
    k = len(lead)
    x = ops.transpose(x, (*range(k), k + 1, k, k + 2))
    return ops.reshape(x, (*lead, n, heads * ch))


def logit_scale(c: int, heads: int, mode: str = "head") -> float:
    """1/sqrt(c/heads) for ``mode="head"``, 1/sqrt(c) for ``mode="full"``."""
    if mode == "head":
        return 1.0 / math.sqrt(c // heads)
    if mode == "full":
        return 1.0 / math.sqrt(c)
    raise ValueError(f"unknown logit scale mode {mode!r}")


def attention(query, key, value, p: AttentionParams, heads: int, scale_mode: str = "head",
              return_weights: bool = False):
    """Multi-head dot-product attention (no residual).

    ``query`` is ``(..., Nq, c)``; ``key``/``value`` are ``(..., Nk, c)``.
    Returns ``(..., Nq, c)``; with ``return_weights`` also the
    ``(..., heads, Nq, Nk)`` attention weights.
    """
    c = query.shape[-1]
    if c % heads:
        raise ValueError(f"c={c} not divisible by {heads} heads")
    q = split_heads(ops.matmul(query, p.w_q), heads)
    k = split_heads(ops.matmul(key, p.w_k), heads)
    v = split_heads(ops.matmul(value, p.w_v), heads)
    nd = k.ndim
    logits = ops.scale(ops.matmul(q, ops.transpose(k, (*range(nd - 2), nd - 1, nd - 2))),
                       logit_scale(c, heads, scale_mode))
    w = ops.softmax(logits, axis=-1)
    out = ops.matmul(merge_heads(ops.matmul(w, v)), p.w_o)
    return (out, w) if return_weights else out


@lru_cache(maxsize=64)
def sine_position_encoding(h: int, w: int, c: int) -> np.ndarray:
    """Fixed 2-D sinusoidal encoding, ``h*w x c``; half the channels encode
    the row, half the column."""
    if c % 4:
        pad_to = c + (-c) % 4
    else:
        pad_to = c
    quarter = pad_to // 4
    freq = 1.0 / (10000.0 ** (np.arange(quarter) / max(quarter, 1)))
    rows, cols = np.divmod(np.arange(h * w), w)
    parts = []
    for coord in (rows, cols):
        ang = (coord[:, None] + 0.5) * freq[None, :]
        parts += [np.sin(ang), np.cos(ang)]
    enc = np.concatenate(parts, axis=1)[:, :c]
    enc.setflags(write=False)
    return enc
