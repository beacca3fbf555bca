"""Finite-difference gradient checks for every parameterised operation.

Each case builds a small random instance and a scalar objective
``sum(out * R)`` with a fixed random ``R``, so every output entry
contributes to the gradient.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import bottleneck, cnp, decoder, s6
from .clip import ClipFeatures
from .config import MICRO
from .layers import AttentionParams, FeedForwardParams, named_parameters
from .model import LGRNet, StubParams, downsample_masks, feature_stub, moving_ellipse
from .numkit import ops
from .numkit.gradcheck import GradcheckReport, gradcheck
from .numkit.rng import Rng
from .numkit.tensor import Tensor

OP_TOL = 1e-5
MODEL_TOL = 1e-4

Case = Callable[[Rng], tuple[Callable[[], Tensor], list[Tensor], list[str]]]


def _t(rng: Rng, shape, std=1.0, name=None) -> Tensor:
    return Tensor(rng.normal(shape, std), requires_grad=True, name=name)


def _probe(out_fn: Callable[[], Tensor], rng: Rng) -> Callable[[], Tensor]:
    r = rng.normal(out_fn().shape)
    return lambda: ops.sum(ops.mul(out_fn(), r))


def _perturb(obj, rng: Rng, std: float) -> None:
    """Randomise every parameter so no gradient is trivially zero."""
    for _, p in named_parameters(obj):
        p.data += rng.normal(p.shape, std)


def _tiny_clip(rng: Rng, c: int, T: int = 2, sizes=((4, 4), (2, 2))) -> ClipFeatures:
    return ClipFeatures([_t(rng, (T, h * w, c), name=f"scale{i + 1}") for i, (h, w) in enumerate(sizes)],
                        list(sizes))


def case_matmul(rng):
    a, b = _t(rng, (4, 3), name="a"), _t(rng, (3, 5), name="b")
    return _probe(lambda: ops.matmul(a, b), rng), [a, b], ["a", "b"]


def case_softmax(rng):
    x = _t(rng, (3, 6), name="x")
    return _probe(lambda: ops.softmax(x, axis=1), rng), [x], ["x"]


def case_log_softmax(rng):
    x = _t(rng, (3, 4), name="x")
    return _probe(lambda: ops.log_softmax(x, axis=1), rng), [x], ["x"]


def case_silu(rng):
    x = _t(rng, (5, 4), 2.0, "x")
    return _probe(lambda: ops.silu(x), rng), [x], ["x"]


def case_softplus(rng):
    x = _t(rng, (5, 4), 2.0, "x")
    return _probe(lambda: ops.softplus(x), rng), [x], ["x"]


def case_conv1d_same(rng):
    x, k = _t(rng, (7, 3), name="x"), _t(rng, (3, 3), name="kernel")
    return _probe(lambda: ops.conv1d_depthwise(x, k, "same"), rng), [x, k], ["x", "kernel"]


def case_conv1d_causal(rng):
    x, k = _t(rng, (7, 3), name="x"), _t(rng, (4, 3), name="kernel")
    return _probe(lambda: ops.conv1d_depthwise(x, k, "causal"), rng), [x, k], ["x", "kernel"]


def case_group_norm(rng):
    x, w, b = _t(rng, (2, 5, 4), name="x"), _t(rng, (4,), name="w"), _t(rng, (4,), name="b")
    return _probe(lambda: ops.group_norm(x, 2, w, b), rng), [x, w, b], ["x", "weight", "bias"]


def case_layer_norm(rng):
    x, w, b = _t(rng, (3, 5), name="x"), _t(rng, (5,), name="w"), _t(rng, (5,), name="b")
    return _probe(lambda: ops.layer_norm(x, w, b), rng), [x, w, b], ["x", "weight", "bias"]


def case_gather_scatter(rng):
    x = _t(rng, (5, 3), name="x")
    idx = np.array([4, 0, 2, 2, 1])
    return (_probe(lambda: ops.index_add(6, idx[::-1], ops.take(x, idx, axis=0)), rng), [x], ["x"])


def _scan_case(method):
    def case(rng):
        S, n, c = 9, 3, 4
        a = Tensor(rng.uniform((S, n, c), 0.2, 0.95), requires_grad=True, name="delta_a")
        b, C = _t(rng, (S, n, c), name="delta_b"), _t(rng, (S, n), name="c_out")
        return (_probe(lambda: s6.selective_scan(a, b, C, method), rng), [a, b, C],
                ["delta_a", "delta_b", "c_out"])
    return case


def case_s6_forward(rng):
    p = s6.S6Params.init(rng.spawn(1), c=4, c_state=3, c_rank=2, conv_kernel=4, std=0.5)
    x = _t(rng, (8, 4), name="x")
    names, params = zip(*named_parameters(p))
    return _probe(lambda: s6.s6_forward(x, p), rng), [x, *params], ["x", *names]


def case_cnp_attend(rng):
    c, H, W = 4, 4, 4
    cfg = cnp.CnpConfig(k=3, d=1, heads=2, c=c)
    p = cnp.CnpParams.init(rng.spawn(1), c, std=0.5, prenorm=False)
    vt, vp = _t(rng, (H * W, c), name="v_t"), _t(rng, (H * W, c), name="v_prev")
    names, params = zip(*named_parameters(p))
    return (_probe(lambda: cnp.cnp_attend(vt, vp, (H, W), cfg, p), rng), [vt, vp, *params],
            ["v_t", "v_prev", *names])


def case_cnp_layer(rng):
    c = 4
    cfg = cnp.CnpConfig(k=3, d=1, heads=2, c=c)
    p = cnp.CnpParams.init(rng.spawn(1), c, std=0.5)
    _perturb(p, rng, 0.3)
    clip = _tiny_clip(rng, c, T=3)
    names, params = zip(*named_parameters(p))
    return (_probe(lambda: cnp.cnp_layer(clip, cfg, p).scale(2), rng), [clip.scale(2), *params],
            ["scale2", *names])


def case_condense(rng):
    c = 4
    p = AttentionParams.init(rng.spawn(1), c, 0.5)
    L, lvl = _t(rng, (3, c), name="L"), _t(rng, (2, c), name="level_embed")
    f2, f3 = _t(rng, (2, 4, c), name="f2"), _t(rng, (2, 1, c), name="f3")
    names, params = zip(*named_parameters(p))
    fn = lambda: bottleneck.condense(L, [f2, f3], [(2, 2), (1, 1)], p, lvl, heads=2)
    return _probe(fn, rng), [L, f2, f3, lvl, *params], ["L", "f2", "f3", "level_embed", *names]


def case_distribute(rng):
    c = 4
    p = AttentionParams.init(rng.spawn(1), c, 0.5)
    Lt, lvl = _t(rng, (2, 3, c), name="L_t"), _t(rng, (2, c), name="level_embed")
    f2, f3 = _t(rng, (2, 4, c), name="f2"), _t(rng, (2, 1, c), name="f3")
    names, params = zip(*named_parameters(p))

    def fn():
        a, b = bottleneck.distribute([f2, f3], [(2, 2), (1, 1)], Lt, p, lvl, heads=2)
        return ops.concat([a, b], axis=1)

    return _probe(fn, rng), [Lt, f2, f3, lvl, *params], ["L_t", "f2", "f3", "level_embed", *names]


def case_hilbert_ss(rng):
    cfg = MICRO.replace(c=4, c_state=3, c_rank=2, init_std=0.5, gn_groups=1, heads=1)
    p = bottleneck.HilbertSSParams.init(rng.spawn(1), cfg)
    _perturb(p.norm, rng, 0.3)
    q = _t(rng, (3, 4, 4), name="queries")
    names, params = zip(*named_parameters(p))
    return _probe(lambda: bottleneck.hilbert_ss(q, p), rng), [q, *params], ["queries", *names]


def case_decoder_layer(rng):
    c = 4
    p = decoder.DecoderLayerParams.init(rng.spawn(1), c, 6, std=0.5)
    _perturb(p, rng, 0.2)
    clip = _tiny_clip(rng, c)
    q, lvl = _t(rng, (3, c), name="queries"), _t(rng, (1, c), name="level_embed")
    names, params = zip(*named_parameters(p))
    return (_probe(lambda: decoder.decoder_layer(q, clip, 2, p, lvl, heads=2), rng),
            [q, clip.scale(2), lvl, *params], ["queries", "scale2", "level_embed", *names])


def case_mask_head(rng):
    c = 4
    mlp = FeedForwardParams.init(rng.spawn(1), c, c, 0.5)
    _perturb(mlp, rng, 0.2)
    q, pix = _t(rng, (3, c), name="queries"), _t(rng, (2, 6, c), name="pixels")
    names, params = zip(*named_parameters(mlp))
    return _probe(lambda: decoder.mask_head(q, pix, mlp), rng), [q, pix, *params], ["queries", "pixels", *names]


def case_loss(rng):
    masks, logits = _t(rng, (4, 2, 6), 2.0, "mask_logits"), _t(rng, (4, 2), name="class_logits")
    gt = (rng.uniform((2, 2, 6)) > 0.5).astype(float)
    fn = lambda: decoder.loss(decoder.Prediction(masks, logits), gt).total
    return fn, [masks, logits], ["mask_logits", "class_logits"]


def case_feature_stub(rng):
    cfg = MICRO
    p = StubParams.init(rng.spawn(1), cfg)
    _perturb(p, rng, 0.1)
    frames = rng.uniform((cfg.t_clip, cfg.height, cfg.width))
    names, params = zip(*named_parameters(p))

    def fn():
        clip = feature_stub(frames, p, cfg)
        return ops.concat([ops.reshape(x, (-1,)) for x in clip.scales], axis=0)

    return _probe(fn, rng), list(params), list(names)


OP_CASES: dict[str, Case] = {
    "matmul": case_matmul,
    "softmax": case_softmax,
    "log_softmax": case_log_softmax,
    "silu": case_silu,
    "softplus": case_softplus,
    "conv1d_depthwise[same]": case_conv1d_same,
    "conv1d_depthwise[causal]": case_conv1d_causal,
    "group_norm": case_group_norm,
    "layer_norm": case_layer_norm,
    "take+index_add": case_gather_scatter,
    "selective_scan[sequential]": _scan_case("sequential"),
    "selective_scan[parallel]": _scan_case("parallel"),
    "s6_forward": case_s6_forward,
    "cnp_attend": case_cnp_attend,
    "cnp_layer": case_cnp_layer,
    "condense": case_condense,
    "hilbert_ss": case_hilbert_ss,
    "distribute": case_distribute,
    "decoder_layer": case_decoder_layer,
    "mask_head": case_mask_head,
    "loss": case_loss,
    "feature_stub": case_feature_stub,
}


def run_op_check(name: str, seed: int = 0, tol: float = OP_TOL) -> GradcheckReport:
    fn, params, names = OP_CASES[name](Rng(seed))
    return gradcheck(fn, params, names, tol=tol, name=name)


def run_model_check(seed: int = 0, tol: float = MODEL_TOL, max_coords: int | None = 12,
                    perturb_std: float = 0.3) -> GradcheckReport:
    """Total loss of the micro model vs every parameter group."""
    cfg = MICRO
    model = LGRNet(cfg, seed)
    rng = Rng(seed + 1000)
    _perturb(model.params, rng, perturb_std)
    clip = moving_ellipse(cfg.t_clip, cfg.height, cfg.width, seed)
    gt = downsample_masks(clip.gt_masks)
    names, params = zip(*model.named_parameters())
    fn = lambda: model.loss(clip.frames, gt).total
    return gradcheck(fn, params, names, tol=tol, max_coords=max_coords, seed=seed, name="model")


def run_suite(seed: int = 0, include_model: bool = True) -> list[GradcheckReport]:
    reports = [run_op_check(name, seed) for name in OP_CASES]
    if include_model:
        reports.append(run_model_check(seed))
    return reports
