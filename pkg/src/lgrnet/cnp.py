"""Cyclic neighborhood propagation.

Each frame's tokens attend to a ``k x k`` dilated window of the cyclically
previous frame (frame 1 looks at frame T).  All scales share one parameter
set, and every frame reads the pre-update features of its neighbour.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .clip import ClipFeatures
from .layers import NormParams, layer_norm, logit_scale
from .numkit import ops
from .numkit.rng import Rng
from .numkit.tensor import Tensor, as_tensor


@dataclass(frozen=True)
class CnpConfig:
    k: int = 5
    d: int = 2
    heads: int = 8
    c: int = 64
    scale_mode: str = "head"  # "head": sqrt(c/M); "full": sqrt(c)

    def __post_init__(self):
        if self.k < 1 or self.k % 2 == 0:
            raise ValueError(f"kernel size must be odd and >= 1, got {self.k}")
        if self.d < 1:
            raise ValueError(f"dilation must be >= 1, got {self.d}")
        if self.heads < 1 or self.c % self.heads:
            raise ValueError(f"c={self.c} not divisible by {self.heads} heads")


@dataclass
class CnpParams:
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor  # per-head output projections, stacked head-major along rows
    norm: NormParams | None = None

    @classmethod
    def init(cls, rng: Rng, c: int, std: float = 0.02, prenorm: bool = True) -> "CnpParams":
        return cls(*(rng.param((c, c), std, n) for n in ("w_q", "w_k", "w_v", "w_o")),
                   norm=NormParams.init(c) if prenorm else None)


def cyclic_prev(t: int, T: int) -> int:
    """Previous frame in 1-based cyclic order: ``t-1``, or ``T`` for ``t=1``."""
    if not 1 <= t <= T:
        raise ValueError(f"frame index {t} outside 1..{T}")
    return t - 1 if t > 1 else T


def _axis_window(x: int, k: int, d: int, n: int) -> list[int]:
    span = (k - 1) * d
    lo = x - (k // 2) * d
    lo = max(0, min(lo, n - 1 - span))
    return [lo + j * d for j in range(k) if lo + j * d < n]


def neighbor_set(i: int, k: int, d: int, H: int, W: int) -> list[int]:
    """Row-major indices of the dilated ``k x k`` window around cell ``i``.

    At borders the window slides inward rather than being cut, so it keeps
    ``k*k`` members whenever ``H, W >= 1 + (k-1)*d``; on smaller grids it
    holds every reachable cell on the dilation lattice.
    """
    if H < 1 or W < 1 or k < 1 or k % 2 == 0 or d < 1:
        raise ValueError(f"invalid neighborhood grid H={H} W={W} k={k} d={d}")
    if not 0 <= i < H * W:
        raise ValueError(f"cell {i} outside {H}x{W} grid")
    r, c = divmod(i, W)
    return [rr * W + cc for rr in _axis_window(r, k, d, H) for cc in _axis_window(c, k, d, W)]


@lru_cache(maxsize=64)
def neighbor_table(H: int, W: int, k: int, d: int) -> tuple[np.ndarray, np.ndarray]:
    """``(idx, valid)`` of shape ``HW x k^2``; short windows are padded with
    index 0 and ``valid=False``."""
    idx = np.zeros((H * W, k * k), dtype=np.intp)
    valid = np.zeros((H * W, k * k), dtype=bool)
    for i in range(H * W):
        nb = neighbor_set(i, k, d, H, W)
        idx[i, :len(nb)] = nb
        valid[i, :len(nb)] = True
    idx.setflags(write=False)
    valid.setflags(write=False)
    return idx, valid


def neighborhood_update(q_feats, kv_feats, size: tuple[int, int], cfg: CnpConfig,
                        params: CnpParams) -> Tensor:
    """Multi-head neighborhood cross-attention output, no residual.

    ``q_feats``/``kv_feats``: ``(..., HW, c)``.
    """
    q_feats, kv_feats = as_tensor(q_feats), as_tensor(kv_feats)
    H, W = size
    *lead, hw, c = q_feats.shape
    if kv_feats.shape != q_feats.shape or hw != H * W or c != cfg.c:
        raise ValueError(f"CNP shape mismatch: {q_feats.shape} vs {kv_feats.shape}, grid {H}x{W}, c={cfg.c}")
    M, ch = cfg.heads, c // cfg.heads
    kk = cfg.k * cfg.k
    idx, valid = neighbor_table(H, W, cfg.k, cfg.d)
    axis = len(lead)
    q = ops.reshape(ops.matmul(q_feats, params.w_q), (*lead, hw, 1, M, ch))
    kn = ops.reshape(ops.take(ops.matmul(kv_feats, params.w_k), idx, axis=axis), (*lead, hw, kk, M, ch))
    vn = ops.reshape(ops.take(ops.matmul(kv_feats, params.w_v), idx, axis=axis), (*lead, hw, kk, M, ch))
    logits = ops.scale(ops.sum(ops.mul(q, kn), axis=-1), logit_scale(c, M, cfg.scale_mode))
    w = ops.softmax(logits, axis=-2, mask=valid[:, :, None])
    heads_out = ops.sum(ops.mul(ops.reshape(w, (*lead, hw, kk, M, 1)), vn), axis=-3)
    return ops.matmul(ops.reshape(heads_out, (*lead, hw, c)), params.w_o)


def cnp_attend(v_t, v_prev, size: tuple[int, int], cfg: CnpConfig, params: CnpParams) -> Tensor:
    """``v_t`` plus the neighborhood attention of ``v_t`` over ``v_prev``."""
    return ops.add(v_t, neighborhood_update(v_t, v_prev, size, cfg, params))


def cnp_layer(clip: ClipFeatures, cfg: CnpConfig, params: CnpParams,
              scales: list[int] | None = None) -> ClipFeatures:
    """Apply CNP to ``scales`` (default: 2..S), same parameters for each.

    Per scale: ``V[t] <- V[t] + attn(norm(V[t]), norm(V[prev(t)]))`` for
    all ``t`` at once.
    """
    if scales is None:
        scales = list(range(2, clip.num_scales + 1))
    if not scales or any(not 1 <= s <= clip.num_scales for s in scales):
        raise ValueError(f"CNP scales {scales} missing from a {clip.num_scales}-scale clip")
    T = clip.T
    prev = np.array([cyclic_prev(t, T) - 1 for t in range(1, T + 1)])
    updates = {}
    for s in scales:
        v = clip.scale(s)
        n = layer_norm(v, params.norm)
        n_prev = ops.take(n, prev, axis=0)
        updates[s] = ops.add(v, neighborhood_update(n, n_prev, clip.size(s), cfg, params))
    return clip.with_scales(updates)
