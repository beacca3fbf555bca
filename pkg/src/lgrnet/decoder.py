"""Query-based mask decoder, matched loss and inference-time selection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .clip import ClipFeatures
from .config import ModelConfig
from .layers import (
    AttentionParams, FeedForwardParams, NormParams, attention, feed_forward, layer_norm,
    sine_position_encoding,
)
from .matching import hungarian_match
from .metrics import metrics
from .numkit import ops
from .numkit.ops import _sigmoid
from .numkit.rng import Rng
from .numkit.tensor import Tensor, as_tensor

FOREGROUND, BACKGROUND = 0, 1


@dataclass
class DecoderLayerParams:
    cross_norm: NormParams
    cross: AttentionParams
    self_norm: NormParams
    self_attn: AttentionParams
    ffn_norm: NormParams
    ffn: FeedForwardParams

    @classmethod
    def init(cls, rng: Rng, c: int, hidden: int, std: float = 0.02) -> "DecoderLayerParams":
        return cls(NormParams.init(c), AttentionParams.init(rng.spawn(0), c, std),
                   NormParams.init(c), AttentionParams.init(rng.spawn(1), c, std),
                   NormParams.init(c), FeedForwardParams.init(rng.spawn(2), c, hidden, std))


@dataclass
class DecoderParams:
    queries: Tensor          # n_hat x c, learned temporal queries
    level_embed: Tensor      # (S-1) x c
    layers: list[DecoderLayerParams]
    final_norm: NormParams
    class_w: Tensor          # c x 2 (foreground, background)
    class_b: Tensor
    mask_mlp: FeedForwardParams

    @classmethod
    def init(cls, rng: Rng, cfg: ModelConfig) -> "DecoderParams":
        c, std = cfg.c, cfg.init_std
        return cls(
            queries=rng.spawn(0).param((cfg.n_hat, c), std, "queries"),
            level_embed=rng.spawn(1).param((cfg.num_scales - 1, c), std, "level_embed"),
            layers=[DecoderLayerParams.init(rng.spawn(10 + i), c, cfg.ffn_mult * c, std)
                    for i in range(cfg.layers)],
            final_norm=NormParams.init(c),
            class_w=rng.spawn(2).param((c, 2), std, "class_w"),
            class_b=Tensor(np.zeros(2), requires_grad=True, name="class_b"),
            mask_mlp=FeedForwardParams.init(rng.spawn(3), c, c, std),
        )


def decoder_scale_order(num_scales: int, layers: int) -> list[int]:
    """Scale attended by each decoder layer: coarsest first, cycling over 2..S."""
    cycle = list(range(num_scales, 1, -1))
    return [cycle[i % len(cycle)] for i in range(layers)]


def decoder_layer(queries, clip: ClipFeatures, s: int, params: DecoderLayerParams,
                  level_embed: Tensor | None = None, heads: int = 1,
                  scale_mode: str = "head") -> Tensor:
    """Cross-attention to every frame of scale ``s`` (``T*H_s*W_s`` keys),
    then self-attention, then feed-forward; pre-norm, residual around each."""
    queries = as_tensor(queries)
    if not 1 <= s <= clip.num_scales:
        raise ValueError(f"scale {s} not in clip")
    if queries.ndim != 2 or queries.shape[1] != clip.c:
        raise ValueError(f"queries {queries.shape} do not match c={clip.c}")
    feats = clip.scale(s)
    T, hw, c = feats.shape
    h, w = clip.size(s)
    if level_embed is not None:
        feats = ops.add(feats, ops.getitem(level_embed, s - 2))
    keys = ops.reshape(ops.add(feats, Tensor.wrap(sine_position_encoding(h, w, c))), (T * hw, c))
    values = ops.reshape(feats, (T * hw, c))

    q = queries
    q = ops.add(q, attention(layer_norm(q, params.cross_norm), keys, values, params.cross,
                             heads, scale_mode))
    n = layer_norm(q, params.self_norm)
    q = ops.add(q, attention(n, n, n, params.self_attn, heads, scale_mode))
    q = ops.add(q, feed_forward(layer_norm(q, params.ffn_norm), params.ffn))
    return q


def dynamic_mask_logits(embed, pixels) -> Tensor:
    """1x1 dynamic convolution: ``embed`` (``N x c``) against per-frame pixel
    features ``T x HW x c``; returns ``N x T x HW``."""
    embed, pixels = as_tensor(embed), as_tensor(pixels)
    logits = ops.matmul(embed, ops.transpose(pixels, (0, 2, 1)))  # T x N x HW
    return ops.transpose(logits, (1, 0, 2))


def mask_head(queries, pixels, mlp: FeedForwardParams) -> Tensor:
    return dynamic_mask_logits(feed_forward(queries, mlp), pixels)


@dataclass
class Prediction:
    masks: Tensor          # n_hat x T x H1*W1 logits
    class_logits: Tensor   # n_hat x 2
    size: tuple[int, int] = (0, 0)

    def foreground_prob(self) -> np.ndarray:
        x = self.class_logits.data
        z = np.exp(x - x.max(axis=1, keepdims=True))
        return z[:, FOREGROUND] / z.sum(axis=1)


def decode(clip: ClipFeatures, params: DecoderParams, cfg: ModelConfig) -> Prediction:
    q = params.queries
    for layer, s in zip(params.layers, decoder_scale_order(clip.num_scales, len(params.layers))):
        q = decoder_layer(q, clip, s, layer, params.level_embed, cfg.heads, cfg.logit_scale)
    q = layer_norm(q, params.final_norm)
    class_logits = ops.add(ops.matmul(q, params.class_w), params.class_b)
    masks = mask_head(q, clip.scale(1), params.mask_mlp)
    return Prediction(masks, class_logits, clip.size(1))


# --- loss -------------------------------------------------------------------

@dataclass
class MatchedLoss:
    assignment: dict[int, int]   # ground-truth index -> query index
    total: Tensor
    components: dict[str, float] = field(default_factory=dict)
    lambdas: tuple[float, float, float] = (2.0, 5.0, 2.0)


def _check_gt(gt: np.ndarray, pred: Prediction) -> np.ndarray:
    gt = np.asarray(gt, dtype=np.float64)
    n, T, hw = pred.masks.shape
    if gt.ndim != 3 or gt.shape[1:] != (T, hw):
        raise ValueError(f"ground truth {gt.shape} does not match masks (G, {T}, {hw})")
    if not np.isin(gt, (0.0, 1.0)).all():
        raise ValueError("ground-truth masks must be binary")
    if gt.shape[0] > n:
        raise ValueError(f"{gt.shape[0]} ground-truth masks but only {n} queries")
    return gt


def matching_cost(pred: Prediction, gt_masks, lambdas=(2.0, 5.0, 2.0),
                  logit_clip: float = 20.0) -> np.ndarray:
    """Dense pairwise cost, ``n_hat x G``, on detached values."""
    gt = _check_gt(gt_masks, pred)
    lc, ld, lce = lambdas
    n = pred.masks.shape[0]
    x = np.clip(pred.masks.data.reshape(n, -1), -logit_clip, logit_clip)
    g = gt.reshape(len(gt), -1)
    p = _sigmoid(x)
    dice = 1.0 - (2.0 * p @ g.T + 1.0) / (p.sum(1)[:, None] + g.sum(1)[None, :] + 1.0)
    bce = (np.logaddexp(0.0, x).sum(1)[:, None] - x @ g.T) / x.shape[1]
    z = pred.class_logits.data
    cls = (np.logaddexp(z[:, 0], z[:, 1]) - z[:, FOREGROUND])[:, None]  # -log p_fg, stable
    return lc * cls + ld * dice + lce * bce


def loss(pred: Prediction, gt_masks, lambdas=(2.0, 5.0, 2.0), logit_clip: float = 20.0) -> MatchedLoss:
    """Hungarian-matched class / dice / BCE loss.

    Matched queries target foreground and are compared to their mask;
    unmatched queries target background and carry no mask loss.
    """
    gt = _check_gt(gt_masks, pred)
    lc, ld, lce = lambdas
    n = pred.masks.shape[0]
    G = len(gt)
    query_of_gt = hungarian_match(matching_cost(pred, gt, lambdas, logit_clip)) if G else np.zeros(0, int)

    target = np.full(n, BACKGROUND)
    target[query_of_gt] = FOREGROUND
    onehot = np.zeros((n, 2))
    onehot[np.arange(n), target] = 1.0
    logp = ops.log_softmax(pred.class_logits, axis=1)
    class_loss = ops.neg(ops.mean(ops.sum(ops.mul(logp, onehot), axis=1)))

    if G:
        x = ops.clip(ops.reshape(ops.take(pred.masks, query_of_gt, axis=0), (G, -1)),
                     -logit_clip, logit_clip)
        g = gt.reshape(G, -1)
        p = ops.sigmoid(x)
        num = ops.add(ops.scale(ops.sum(ops.mul(p, g), axis=1), 2.0), 1.0)
        den = ops.add(ops.sum(p, axis=1), g.sum(1) + 1.0)
        dice_loss = ops.mean(ops.sub(1.0, ops.div(num, den)))
        bce_loss = ops.mean(ops.sub(ops.softplus(x), ops.mul(x, g)))
    else:
        dice_loss = Tensor(0.0)
        bce_loss = Tensor(0.0)

    total = ops.add(ops.add(ops.scale(class_loss, lc), ops.scale(dice_loss, ld)),
                    ops.scale(bce_loss, lce))
    return MatchedLoss(
        assignment={int(g_): int(q) for g_, q in enumerate(query_of_gt)},
        total=total,
        components={"class": class_loss.item(), "dice": dice_loss.item(), "bce": bce_loss.item()},
        lambdas=(lc, ld, lce),
    )


# --- inference --------------------------------------------------------------

def select_output(pred: Prediction) -> tuple[np.ndarray, float, int]:
    """Mask of the query with the highest foreground probability (lowest
    index on ties), thresholded at probability 0.5; returns
    ``(mask T x HW bool, confidence, query index)``."""
    fg = pred.foreground_prob()
    q = int(np.argmax(fg))
    return pred.masks.data[q] > 0.0, float(fg[q]), q


def evaluate(pred: Prediction, gt_mask) -> dict[str, float]:
    mask, conf, _ = select_output(pred)
    out = metrics(mask, np.asarray(gt_mask).reshape(mask.shape) > 0.5)
    out["confidence"] = conf
    return out
