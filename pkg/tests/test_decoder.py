import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lgrnet import decoder
from lgrnet.clip import ClipFeatures
from lgrnet.decoder import Prediction
from lgrnet.layers import FeedForwardParams
from lgrnet.matching import assignment_cost, hungarian_match, linear_assignment
from lgrnet.metrics import metrics
from lgrnet.numkit.rng import Rng
from lgrnet.numkit.tensor import Tensor

from oracles import brute_force_assignment


def _clip(T=6, c=8, seed=0, sizes=((8, 8), (8, 8), (4, 4))):
    r = Rng(seed)
    return ClipFeatures([Tensor(r.normal((T, h * w, c))) for h, w in sizes], list(sizes))


def test_cross_attention_key_length():
    from lgrnet.layers import attention
    clip = _clip()
    p = decoder.DecoderLayerParams.init(Rng(1), 8, 16, 0.3)
    _, w = attention(Tensor(np.zeros((3, 8))), clip.scale(2).reshape(-1, 8), clip.scale(2).reshape(-1, 8),
                     p.cross, 2, return_weights=True)
    assert w.shape[-1] == 384


def test_zero_update_projections_are_identity():
    clip = _clip()
    p = decoder.DecoderLayerParams.init(Rng(2), 8, 16, 0.3)
    p.cross.w_o.data[...] = 0.0
    p.self_attn.w_o.data[...] = 0.0
    p.ffn.w2.data[...] = 0.0
    q = Rng(3).normal((5, 8))
    out = decoder.decoder_layer(q, clip, 2, p, Rng(4).normal((2, 8)), heads=2)
    np.testing.assert_array_equal(out.data, q)


def test_decoder_layer_errors():
    clip = _clip()
    p = decoder.DecoderLayerParams.init(Rng(2), 8, 16)
    with pytest.raises(ValueError):
        decoder.decoder_layer(np.zeros((3, 8)), clip, 4, p)
    with pytest.raises(ValueError):
        decoder.decoder_layer(np.zeros((3, 6)), clip, 2, p)


def test_scale_order_cycles_coarsest_first():
    assert decoder.decoder_scale_order(4, 3) == [4, 3, 2]
    assert decoder.decoder_scale_order(3, 5) == [3, 2, 3, 2, 3]


def _mlp(c, seed):
    return FeedForwardParams.init(Rng(seed), c, c, 0.5)


def test_dynamic_conv_orthogonal_and_linear():
    pixels = np.zeros((2, 5, 4))
    pixels[..., :2] = Rng(5).normal((2, 5, 2))
    embed = np.array([[0.0, 0.0, 1.0, -2.0], [1.0, 2.0, 0.0, 0.0]])
    logits = decoder.dynamic_mask_logits(embed, pixels).data
    assert logits.shape == (2, 2, 5)
    assert (logits[0] == 0).all()
    np.testing.assert_allclose(decoder.dynamic_mask_logits(2 * embed, pixels).data, 2 * logits, atol=1e-12)
    np.testing.assert_allclose(logits[1], pixels @ embed[1], atol=1e-12)


def test_mask_head_shape():
    q = Rng(6).normal((10, 4))
    pix = Rng(7).normal((6, 88 * 88, 4))
    assert decoder.mask_head(q, pix, _mlp(4, 8)).shape == (10, 6, 7744)


# --- matching -----------------------------------------------------------------

def test_hungarian_examples():
    cost = np.array([[1.0, 2.0], [2.0, 1.0]])
    q = hungarian_match(cost)
    assert q.tolist() == [0, 1] and assignment_cost(cost, q) == 2.0
    col = np.array([[3.0], [0.5], [2.0]])
    assert hungarian_match(col).tolist() == [1]


@given(st.integers(0, 5), st.integers(0, 3), st.integers(0, 10**6))
@settings(max_examples=150, deadline=None)
def test_hungarian_equals_brute_force(g, extra, seed):
    n = g + extra
    if n == 0:
        return
    cost = Rng(seed).normal((n, g))
    q = hungarian_match(cost)
    assert len(set(q.tolist())) == g
    best, _ = brute_force_assignment(cost)
    assert assignment_cost(cost, q) == pytest.approx(best, abs=1e-12)


def test_hungarian_integer_ties_exact():
    r = Rng(9)
    for _ in range(50):
        cost = r.integers(0, 3, (6, 4)).astype(float)
        assert assignment_cost(cost, hungarian_match(cost)) == brute_force_assignment(cost)[0]


def test_hungarian_rejects_more_gt_than_queries():
    with pytest.raises(ValueError):
        hungarian_match(np.zeros((2, 3)))


def test_linear_assignment_square():
    cost = np.array([[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]])
    rows = linear_assignment(cost)
    assert sum(cost[i, rows[i]] for i in range(3)) == 5.0


# --- loss -----------------------------------------------------------------------

def _perfect(gt, n=3):
    G, T, hw = gt.shape
    masks = np.full((n, T, hw), -30.0)
    logits = np.tile([-30.0, 30.0], (n, 1))
    for g in range(G):
        masks[g] = np.where(gt[g] > 0, 30.0, -30.0)
        logits[g] = [30.0, -30.0]
    return Prediction(Tensor(masks), Tensor(logits))


def test_perfect_prediction_near_zero_loss():
    gt = (Rng(10).uniform((2, 2, 12)) > 0.5).astype(float)
    ml = decoder.loss(_perfect(gt), gt)
    assert ml.assignment == {0: 0, 1: 1}
    assert ml.components["dice"] <= 1e-6 and ml.components["bce"] <= 1e-6
    assert ml.components["class"] <= 1e-6


def test_no_ground_truth_is_class_only():
    masks = Tensor(Rng(11).normal((3, 2, 6)))
    logits = Tensor(Rng(12).normal((3, 2)))
    ml = decoder.loss(Prediction(masks, logits), np.zeros((0, 2, 6)))
    assert ml.assignment == {}
    assert ml.components["dice"] == 0.0 and ml.components["bce"] == 0.0
    x = logits.data
    ce = np.mean(np.logaddexp(x[:, 0], x[:, 1]) - x[:, 1])
    assert ml.components["class"] == pytest.approx(ce, abs=1e-12)
    assert ml.total.item() == pytest.approx(2 * ce, abs=1e-12)


@given(st.integers(0, 10**6))
@settings(max_examples=25, deadline=None)
def test_total_is_weighted_sum_and_nonnegative(seed):
    r = Rng(seed)
    pred = Prediction(Tensor(r.normal((4, 2, 5), 3.0)), Tensor(r.normal((4, 2))))
    gt = (r.uniform((2, 2, 5)) > 0.5).astype(float)
    ml = decoder.loss(pred, gt)
    c = ml.components
    assert ml.total.item() == pytest.approx(2 * c["class"] + 5 * c["dice"] + 2 * c["bce"], abs=1e-12)
    assert ml.total.item() >= 0
    q = np.array([ml.assignment[g] for g in range(2)])
    cost = decoder.matching_cost(pred, gt)
    assert assignment_cost(cost, q) == pytest.approx(brute_force_assignment(cost)[0], abs=1e-12)


def test_loss_matches_hand_computation():
    x = np.array([[[2.0, -1.0]], [[0.5, 0.0]]])
    logits = np.array([[1.0, 0.0], [0.0, 2.0]])
    gt = np.array([[[1.0, 0.0]]])
    pred = Prediction(Tensor(x), Tensor(logits))
    ml = decoder.loss(pred, gt)
    q = ml.assignment[0]
    p = 1 / (1 + np.exp(-x[q, 0]))
    dice = 1 - (2 * p[0] + 1) / (p.sum() + 1 + 1)
    bce = np.mean(np.logaddexp(0, x[q, 0]) - x[q, 0] * gt[0, 0])
    tgt = [1, 1]
    tgt[q] = 0
    ls = logits - np.logaddexp(logits[:, :1], logits[:, 1:])
    cls = -np.mean([ls[i, tgt[i]] for i in range(2)])
    assert ml.components["dice"] == pytest.approx(dice, abs=1e-12)
    assert ml.components["bce"] == pytest.approx(bce, abs=1e-12)
    assert ml.components["class"] == pytest.approx(cls, abs=1e-12)


def test_loss_errors():
    pred = Prediction(Tensor(np.zeros((2, 1, 4))), Tensor(np.zeros((2, 2))))
    with pytest.raises(ValueError):
        decoder.loss(pred, np.full((1, 1, 4), 0.5))
    with pytest.raises(ValueError):
        decoder.loss(pred, np.zeros((3, 1, 4)))
    with pytest.raises(ValueError):
        decoder.loss(pred, np.zeros((1, 2, 4)))


# --- selection and metrics ------------------------------------------------------

def _pred_with_fg(probs):
    probs = np.asarray(probs)
    logits = np.stack([np.log(probs), np.log1p(-probs)], axis=1)
    masks = Rng(13).normal((len(probs), 2, 4))
    return Prediction(Tensor(masks), Tensor(logits))


def test_select_output_picks_confident_query():
    pred = _pred_with_fg([0.1, 0.9, 0.1])
    mask, conf, q = decoder.select_output(pred)
    assert q == 1 and conf == pytest.approx(0.9)
    np.testing.assert_array_equal(mask, pred.masks.data[1] > 0)


def test_select_output_tie_breaks_low():
    _, conf, q = decoder.select_output(_pred_with_fg([0.3, 0.7, 0.7]))
    assert q == 1 and 0.0 <= conf <= 1.0


@given(st.lists(st.floats(0.01, 0.99), min_size=1, max_size=6))
def test_select_output_invariant_to_monotone_transform(ps):
    a = decoder.select_output(_pred_with_fg(ps))[2]
    b = decoder.select_output(_pred_with_fg(np.sqrt(ps)))[2]
    assert a == b


def test_metrics_examples():
    top = np.zeros((4, 4), bool)
    top[:2] = True
    left = np.zeros((4, 4), bool)
    left[:, :2] = True
    m = metrics(top, left)
    assert m == pytest.approx({"dice": 0.5, "iou": 1 / 3, "mae": 0.5})
    assert metrics(top, top) == {"dice": 1.0, "iou": 1.0, "mae": 0.0}
    assert metrics(top, ~top)["dice"] == 0.0 and metrics(top, ~top)["iou"] == 0.0
    empty = np.zeros((3, 3))
    assert metrics(empty, empty) == {"dice": 1.0, "iou": 1.0, "mae": 0.0}


@given(st.integers(0, 10**6))
@settings(max_examples=50, deadline=None)
def test_iou_dice_relation(seed):
    r = Rng(seed)
    p, g = r.uniform((5, 5)) > 0.5, r.uniform((5, 5)) > 0.5
    m = metrics(p, g)
    assert m["iou"] == pytest.approx(m["dice"] / (2 - m["dice"]), abs=1e-12)


def test_metrics_errors():
    with pytest.raises(ValueError):
        metrics(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        metrics(np.full((2, 2), 0.5), np.zeros((2, 2)))
