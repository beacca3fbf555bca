"""Binary segmentation metrics."""

from __future__ import annotations

import numpy as np


def _binary(x, name: str) -> np.ndarray:
    a = np.asarray(x)
    if a.dtype != bool:
        if not np.isin(a, (0, 1)).all():
            raise ValueError(f"{name} must be binary")
        a = a.astype(bool)
    return a


def metrics(pred_mask, gt_mask) -> dict[str, float]:
    """Dice, IoU and MAE of two binary masks of equal shape.

    Two empty masks score dice = iou = 1 and mae = 0.
    """
    p = _binary(pred_mask, "prediction")
    g = _binary(gt_mask, "ground truth")
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    inter = int(np.logical_and(p, g).sum())
    union = int(np.logical_or(p, g).sum())
    total = int(p.sum()) + int(g.sum())
    dice = 1.0 if total == 0 else 2.0 * inter / total
    iou = 1.0 if union == 0 else inter / union
    mae = float(np.mean(p != g)) if p.size else 0.0
    return {"dice": dice, "iou": iou, "mae": mae}
