"""Frame bottleneck queries: condense, Hilbert selective scan, distribute.

One encoder layer runs

    CNP (scales 2..S) -> Condense (per frame) -> HilbertSS (all frames)
    -> Distribute (per frame)

Scale 1 is never touched here; it only feeds the mask head.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import hilbert
from .clip import ClipFeatures
from .cnp import CnpConfig, CnpParams, cnp_layer
from .config import ModelConfig
from .layers import AttentionParams, NormParams, attention, layer_norm, sine_position_encoding
from .numkit import ops
from .numkit.rng import Rng
from .numkit.tensor import Tensor, as_tensor
from .s6 import S6Params, s6_forward

__all__ = [
    "ClipFeatures", "EncoderLayerParams", "HilbertSSParams", "condense", "distribute",
    "encoder_layer", "hilbert_ss", "scan_permutation",
]


@dataclass
class HilbertSSParams:
    norm: NormParams | None
    s6: S6Params
    w_out: Tensor  # c x c, applied to the S6 output before the scatter-add

    @classmethod
    def init(cls, rng: Rng, cfg: ModelConfig) -> "HilbertSSParams":
        return cls(NormParams.init(cfg.c),
                   S6Params.init(rng.spawn(1), cfg.c, cfg.c_state, cfg.rank, cfg.conv_kernel,
                                 cfg.init_std, cfg.conv_padding),
                   rng.param((cfg.c, cfg.c), cfg.init_std, "w_out"))


@dataclass
class EncoderLayerParams:
    cnp: CnpParams
    condense: AttentionParams
    hss: HilbertSSParams
    distribute: AttentionParams
    level_embed: Tensor  # (S-1) x c, one row per scale 2..S

    @classmethod
    def init(cls, rng: Rng, cfg: ModelConfig) -> "EncoderLayerParams":
        std = cfg.init_std
        return cls(
            cnp=CnpParams.init(rng.spawn(0), cfg.c, std),
            condense=AttentionParams.init(rng.spawn(1), cfg.c, std),
            hss=HilbertSSParams.init(rng.spawn(2), cfg),
            distribute=AttentionParams.init(rng.spawn(3), cfg.c, std),
            level_embed=rng.spawn(4).param((cfg.num_scales - 1, cfg.c), std, "level_embed"),
        )


def _tokens_with_position(feats: list[Tensor], sizes: list[tuple[int, int]],
                          level_embed: Tensor | None) -> Tensor:
    """Concatenate scale maps along the token axis after adding sinusoidal
    positions and (optionally) per-scale level embeddings."""
    parts = []
    for i, (x, (h, w)) in enumerate(zip(feats, sizes)):
        x = ops.add(x, Tensor.wrap(sine_position_encoding(h, w, x.shape[-1])))
        if level_embed is not None:
            x = ops.add(x, ops.getitem(level_embed, i))
        parts.append(x)
    return ops.concat(parts, axis=-2)


def _check_feats(feats, sizes):
    if not feats:
        raise ValueError("condense/distribute need at least one feature scale")
    if len(feats) != len(sizes):
        raise ValueError("one (H, W) size per feature map is required")
    for x, (h, w) in zip(feats, sizes):
        if x.shape[-2] != h * w:
            raise ValueError(f"feature map with {x.shape[-2]} tokens does not match {h}x{w}")


def condense(L, feats: list, sizes: list[tuple[int, int]], params: AttentionParams,
             level_embed: Tensor | None = None, heads: int = 1, scale_mode: str = "head") -> Tensor:
    """Cross-attention from queries ``L`` (``N x c``) to the flattened,
    concatenated maps ``feats`` (each ``(..., H_s*W_s, c)``), plus residual.

    Keys carry position and level embeddings, values are the raw features.
    Leading axes of ``feats`` (e.g. frames) broadcast against ``L``.
    """
    L = as_tensor(L)
    feats = [as_tensor(f) for f in feats]
    _check_feats(feats, sizes)
    keys = _tokens_with_position(feats, sizes, level_embed)
    values = ops.concat(feats, axis=-2)
    return ops.add(L, attention(L, keys, values, params, heads, scale_mode))


def distribute(feats: list, sizes: list[tuple[int, int]], L_t, params: AttentionParams,
               level_embed: Tensor | None = None, heads: int = 1,
               scale_mode: str = "head") -> list[Tensor]:
    """Cross-attention from every feature token to the queries ``L_t``,
    plus residual; returns the updated maps in the input order."""
    L_t = as_tensor(L_t)
    feats = [as_tensor(f) for f in feats]
    _check_feats(feats, sizes)
    queries = _tokens_with_position(feats, sizes, level_embed)
    update = attention(queries, L_t, L_t, params, heads, scale_mode)
    out = []
    start = 0
    nd = update.ndim
    for x in feats:
        n = x.shape[-2]
        idx = (slice(None),) * (nd - 2) + (slice(start, start + n),)
        out.append(ops.add(x, ops.getitem(update, idx)))
        start += n
    return out


def scan_permutation(n_bar: int, T: int, kind: str = "hilbert",
                     orientation: str = "queries_rows") -> np.ndarray:
    """Curve order over the query/frame grid, as row-major grid indices.

    With ``queries_rows`` the grid has ``n_bar`` rows and ``T`` columns.
    """
    if orientation == "queries_rows":
        curve = hilbert.make_curve(kind, width=T, height=n_bar)
    elif orientation == "frames_rows":
        curve = hilbert.make_curve(kind, width=n_bar, height=T)
    else:
        raise ValueError(f"unknown grid orientation {orientation!r}")
    return hilbert.flatten_indices(curve)


def hilbert_ss(queries, params: HilbertSSParams, kind: str = "hilbert",
               orientation: str = "queries_rows", method: str = "parallel") -> Tensor:
    """Scan the ``T x N x c`` query grid along a space-filling curve.

    Gather along the curve, run the S6 block, then scatter-add the result
    back onto the original grid positions (residual update).
    """
    queries = as_tensor(queries)
    T, n_bar, c = queries.shape
    perm = scan_permutation(n_bar, T, kind, orientation)
    if orientation == "queries_rows":
        grid = ops.reshape(ops.transpose(queries, (1, 0, 2)), (n_bar * T, c))
    else:
        grid = ops.reshape(queries, (T * n_bar, c))
    seq = ops.take(grid, perm, axis=0)
    y = ops.matmul(s6_forward(layer_norm(seq, params.norm), params.s6, method), params.w_out)
    out = ops.add(grid, ops.index_add(n_bar * T, perm, y))
    if orientation == "queries_rows":
        return ops.transpose(ops.reshape(out, (n_bar, T, c)), (1, 0, 2))
    return ops.reshape(out, (T, n_bar, c))


def encoder_layer(clip: ClipFeatures, L, params: EncoderLayerParams,
                  cfg: ModelConfig) -> tuple[ClipFeatures, Tensor]:
    """One reciprocal local-global layer; returns the new clip and the
    per-frame bottleneck queries (``T x N x c``)."""
    S = clip.num_scales
    if S < 2:
        raise ValueError("encoder layer needs scales 2..S")
    scales = list(range(2, S + 1))
    if cfg.use_cnp:
        cnp_cfg = CnpConfig(k=cfg.k, d=cfg.d, heads=cfg.heads, c=clip.c, scale_mode=cfg.logit_scale)
        clip = cnp_layer(clip, cnp_cfg, params.cnp, scales)
    feats = [clip.scale(s) for s in scales]
    sizes = [clip.size(s) for s in scales]
    L_t = condense(L, feats, sizes, params.condense, params.level_embed, cfg.heads, cfg.logit_scale)
    if cfg.use_hilbert_ss:
        L_t = hilbert_ss(L_t, params.hss, cfg.scan, cfg.grid_orientation, cfg.scan_method)
    new = distribute(feats, sizes, L_t, params.distribute, params.level_embed, cfg.heads,
                     cfg.logit_scale)
    return clip.with_scales(dict(zip(scales, new))), L_t
