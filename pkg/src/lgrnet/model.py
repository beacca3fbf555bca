"""End-to-end toy network on synthetic clips, plus a plain gradient-descent
trainer for overfitting a single clip."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .bottleneck import EncoderLayerParams, encoder_layer
from .clip import ClipFeatures
from .config import ModelConfig
from .decoder import DecoderParams, MatchedLoss, Prediction, decode, loss, select_output
from .layers import named_parameters, parameters
from .metrics import metrics
from .numkit import ops
from .numkit.rng import Rng
from .numkit.tensor import NonFiniteError, Tensor, value_and_grad

log = logging.getLogger(__name__)


# --- synthetic data ---------------------------------------------------------

@dataclass
class SyntheticClip:
    frames: np.ndarray    # T x H x W in [0, 1]
    gt_masks: np.ndarray  # G x T x H x W binary

    @property
    def T(self) -> int:
        return self.frames.shape[0]


def moving_ellipse(T: int, H: int, W: int, seed: int, noise: float = 0.05,
                   fg: float = 0.8, bg: float = 0.2, radius_range=(0.18, 0.3),
                   speed: float = 0.04) -> SyntheticClip:
    """A bright ellipse drifting across a dark, noisy background.

    Centre, radii, orientation and velocity are drawn from ``seed``; the
    trajectory is kept inside the frame so every frame has foreground.
    """
    rng = Rng(seed)
    m = min(H, W)
    ry, rx = rng.uniform(2, *radius_range) * m
    theta = rng.uniform((), 0, np.pi)
    margin = max(ry, rx)
    cy0, cx0 = rng.uniform((), margin, H - margin), rng.uniform((), margin, W - margin)
    vel = rng.normal(2) * speed * m
    yy, xx = np.mgrid[0:H, 0:W] + 0.5
    frames = np.empty((T, H, W))
    masks = np.empty((1, T, H, W))
    cy, cx = cy0, cx0
    for t in range(T):
        dy, dx = yy - cy, xx - cx
        u = dx * np.cos(theta) + dy * np.sin(theta)
        v = -dx * np.sin(theta) + dy * np.cos(theta)
        inside = (u / rx) ** 2 + (v / ry) ** 2 <= 1.0
        if not inside.any():
            inside[int(np.clip(cy, 0, H - 1)), int(np.clip(cx, 0, W - 1))] = True
        masks[0, t] = inside
        frames[t] = np.clip(np.where(inside, fg, bg) + rng.normal((H, W), noise), 0.0, 1.0)
        # reflect off the margins
        cy, cx = cy + vel[0], cx + vel[1]
        if not margin <= cy <= H - margin:
            vel[0] = -vel[0]
            cy = np.clip(cy, margin, H - margin)
        if not margin <= cx <= W - margin:
            vel[1] = -vel[1]
            cx = np.clip(cx, margin, W - margin)
    return SyntheticClip(frames, masks)


def downsample_masks(masks: np.ndarray, stride: int = 4) -> np.ndarray:
    """Average-pool ``... x H x W`` binary masks by ``stride`` and threshold
    at 0.5; returns ``... x (H/stride * W/stride)``."""
    *lead, H, W = masks.shape
    pooled = masks.reshape(*lead, H // stride, stride, W // stride, stride).mean(axis=(-3, -1))
    return (pooled >= 0.5).astype(np.float64).reshape(*lead, -1)


# --- feature stub -----------------------------------------------------------

@dataclass
class StubParams:
    stem: Tensor           # 16 x c, 4x4 stride-4 patch embedding of the grey frame
    downs: list[Tensor]    # (4c x c) per extra stage, 2x2 stride 2
    proj: list[Tensor]     # c x c per scale, non-biased 1x1 projection
    gn_w: list[Tensor]
    gn_b: list[Tensor]

    @classmethod
    def init(cls, rng: Rng, cfg: ModelConfig) -> "StubParams":
        c, S = cfg.c, cfg.num_scales
        # fan-in scaled so the stub passes signal at any c
        return cls(
            stem=rng.spawn(0).param((16, c), 1.0 / 4.0, "stem"),
            downs=[rng.spawn(1 + i).param((4 * c, c), 1.0 / np.sqrt(4 * c), "down") for i in range(S - 1)],
            proj=[rng.spawn(10 + i).param((c, c), 1.0 / np.sqrt(c), "proj") for i in range(S)],
            gn_w=[Tensor(np.ones(c), requires_grad=True, name="gn_w") for _ in range(S)],
            gn_b=[Tensor(np.zeros(c), requires_grad=True, name="gn_b") for _ in range(S)],
        )


def _patchify(x: Tensor, h: int, w: int, p: int) -> Tensor:
    """``T x (h*w) x C`` row-major tokens -> ``T x (h/p * w/p) x (p*p*C)``."""
    T, _, C = x.shape
    x = ops.reshape(x, (T, h // p, p, w // p, p, C))
    x = ops.transpose(x, (0, 1, 3, 2, 4, 5))
    return ops.reshape(x, (T, (h // p) * (w // p), p * p * C))


def feature_stub(frames, params: StubParams, cfg: ModelConfig) -> ClipFeatures:
    """Multi-scale features at strides 4, 8, 16, ... from grey frames
    (``T x H x W``): strided patch convolutions, each scale then projected
    by a non-biased 1x1 conv and GroupNorm."""
    frames = np.asarray(frames.data if isinstance(frames, Tensor) else frames, dtype=np.float64)
    T, H, W = frames.shape
    S = cfg.num_scales
    div = 2 ** (S + 1)
    if H % div or W % div:
        raise ValueError(f"frame size {H}x{W} not divisible by {div}")
    x = _patchify(Tensor.wrap(frames.reshape(T, H * W, 1)), H, W, 4)
    h, w = H // 4, W // 4
    stage = ops.silu(ops.matmul(x, params.stem))
    stages, sizes = [stage], [(h, w)]
    for down in params.downs[:S - 1]:
        stage = ops.silu(ops.matmul(_patchify(stage, h, w, 2), down))
        h, w = h // 2, w // 2
        stages.append(stage)
        sizes.append((h, w))
    scales = [ops.group_norm(ops.matmul(st, pr), cfg.gn_groups, gw, gb)
              for st, pr, gw, gb in zip(stages, params.proj, params.gn_w, params.gn_b)]
    return ClipFeatures(scales, sizes)


# --- full model -------------------------------------------------------------

@dataclass
class ModelParams:
    stub: StubParams
    bottleneck_queries: Tensor  # n_bar x c
    encoder: list[EncoderLayerParams]
    decoder: DecoderParams

    @classmethod
    def init(cls, cfg: ModelConfig, seed: int = 0) -> "ModelParams":
        rng = Rng(seed)
        return cls(
            stub=StubParams.init(rng.spawn(0), cfg),
            bottleneck_queries=rng.spawn(1).param((cfg.n_bar, cfg.c), cfg.init_std, "bottleneck_queries"),
            encoder=[EncoderLayerParams.init(rng.spawn(100 + i), cfg) for i in range(cfg.layers)],
            decoder=DecoderParams.init(rng.spawn(2), cfg),
        )


class LGRNet:
    """Parameter container plus forward / loss / training helpers."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, params: ModelParams | None = None):
        self.cfg = cfg
        self.seed = seed
        self.params = params if params is not None else ModelParams.init(cfg, seed)

    def parameters(self) -> list[Tensor]:
        return list(parameters(self.params))

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return list(named_parameters(self.params))

    def encode(self, frames) -> ClipFeatures:
        clip = feature_stub(frames, self.params.stub, self.cfg)
        L = self.params.bottleneck_queries
        for layer in self.params.encoder:
            clip, _ = encoder_layer(clip, L, layer, self.cfg)
        return clip

    def forward(self, frames) -> Prediction:
        return decode(self.encode(frames), self.params.decoder, self.cfg)

    __call__ = forward

    def loss(self, frames, gt_masks) -> MatchedLoss:
        cfg = self.cfg
        return loss(self.forward(frames), gt_masks,
                    (cfg.lambda_class, cfg.lambda_dice, cfg.lambda_ce), cfg.logit_clip)


def forward(clip: SyntheticClip, model: LGRNet) -> Prediction:
    return model.forward(clip.frames)


# --- overfit trainer --------------------------------------------------------

class DivergenceError(RuntimeError):
    def __init__(self, step: int, msg: str = "loss became non-finite"):
        super().__init__(f"step {step}: {msg}")
        self.step = step


@dataclass
class TraceRow:
    step: int
    total: float
    cls: float
    dice: float
    bce: float
    train_dice: float

    def as_dict(self) -> dict:
        return {"step": self.step, "total": self.total, "class": self.cls, "dice": self.dice,
                "bce": self.bce, "train_dice": self.train_dice}


def overfit(clip: SyntheticClip, model: LGRNet, steps: int, lr: float) -> list[TraceRow]:
    """Plain gradient descent on one clip.

    Row ``i`` holds the loss before update ``i``; the last row is measured
    after the final update, so ``steps=0`` yields the initial loss only.
    """
    gt = downsample_masks(clip.gt_masks)
    params = model.parameters()
    trace: list[TraceRow] = []
    for step in range(steps + 1):
        holder = {}

        def objective():
            pred = model.forward(clip.frames)
            ml = loss(pred, gt, (model.cfg.lambda_class, model.cfg.lambda_dice, model.cfg.lambda_ce),
                      model.cfg.logit_clip)
            holder["pred"], holder["loss"] = pred, ml
            return ml.total

        try:
            # non-finite values are caught explicitly, so numpy need not warn
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                if step < steps:
                    _, grads = value_and_grad(objective, params)
                else:
                    objective()
        except NonFiniteError as e:
            raise DivergenceError(step, str(e)) from e
        ml: MatchedLoss = holder["loss"]
        total = ml.total.item()
        if not np.isfinite(total):
            raise DivergenceError(step)
        mask, _, _ = select_output(holder["pred"])
        train_dice = metrics(mask, gt[0] > 0.5)["dice"]
        trace.append(TraceRow(step, total, ml.components["class"], ml.components["dice"],
                              ml.components["bce"], train_dice))
        if step < steps:
            for p, g in zip(params, grads):
                if not np.all(np.isfinite(g)):
                    raise DivergenceError(step, "non-finite gradient")
                p.data -= lr * g
        log.debug("step %d total %.6f dice %.4f", step, total, train_dice)
    return trace
