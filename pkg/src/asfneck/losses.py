"""IoU and the EIoU box-regression loss with its analytic gradient.

Boxes are ``(x1, y1, x2, y2)`` in pixels. EIoU is::

    1 - IoU + |c - c_gt|^2 / (wc^2 + hc^2) + (w - w_gt)^2 / wc^2 + (h - h_gt)^2 / hc^2

where ``c`` are box centres and ``(wc, hc)`` the extent of the smallest box
enclosing both. The array functions accept ``(..., 4)`` arrays and work in
float64; the scalar wrappers take ``BoxXYXY`` values.

Gradient at non-smooth points: where a pred edge coincides with the matching
gt edge (``x1 == gt.x1`` etc.) the min/max in the intersection and enclosure
extents take the mean of their one-sided derivatives (0.5 instead of 0 or 1).
This makes the gradient exactly zero at ``pred == gt``. Touching boxes
(zero-width overlap) are treated as disjoint.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DegenerateBoxError


class BoxXYXY(NamedTuple):
    x1: float
    y1: float
    x2: float
    y2: float

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    def validate(self) -> "BoxXYXY":
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise ValueError(f"invalid box {tuple(self)}: need x2 >= x1 and y2 >= y1")
        return self


@dataclass(frozen=True)
class LossBreakdown:
    iou: float
    l_iou: float
    l_dis: float
    l_asp: float
    total: float
    degenerate: bool = False


def _split(boxes):
    b = np.asarray(boxes, dtype=np.float64)
    if b.shape[-1] != 4:
        raise ValueError(f"boxes need a trailing axis of 4, got shape {b.shape}")
    return b[..., 0], b[..., 1], b[..., 2], b[..., 3]


def _safe_div(num, den):
    den = np.asarray(den, dtype=np.float64)
    ok = den > 0
    return np.where(ok, num / np.where(ok, den, 1.0), 0.0)


def iou_array(a, b) -> np.ndarray:
    ax1, ay1, ax2, ay2 = _split(a)
    bx1, by1, bx2, by2 = _split(b)
    iw = np.clip(np.minimum(ax2, bx2) - np.maximum(ax1, bx1), 0.0, None)
    ih = np.clip(np.minimum(ay2, by2) - np.maximum(ay1, by1), 0.0, None)
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return _safe_div(inter, union)


def iou(a, b) -> float:
    """Intersection over union; 0 for disjoint pairs and for a zero union."""
    return float(iou_array(BoxXYXY(*a).validate(), BoxXYXY(*b).validate()))


def eiou_terms(pred, gt):
    """Vectorized EIoU. Returns ``(iou, l_iou, l_dis, l_asp, total, degenerate)`` arrays.

    A zero enclosure extent on an axis zeroes the terms divided by it and sets
    ``degenerate``; nothing is divided by zero.
    """
    px1, py1, px2, py2 = _split(pred)
    gx1, gy1, gx2, gy2 = _split(gt)
    overlap = iou_array(pred, gt)
    wc = np.maximum(px2, gx2) - np.minimum(px1, gx1)
    hc = np.maximum(py2, gy2) - np.minimum(py1, gy1)
    dcx = ((px1 - gx1) + (px2 - gx2)) / 2.0
    dcy = ((py1 - gy1) + (py2 - gy2)) / 2.0
    l_iou = 1.0 - overlap
    l_dis = _safe_div(dcx * dcx + dcy * dcy, wc * wc + hc * hc)
    dw = (px2 - px1) - (gx2 - gx1)
    dh = (py2 - py1) - (gy2 - gy1)
    l_asp = _safe_div(dw * dw, wc * wc) + _safe_div(dh * dh, hc * hc)
    degenerate = (wc <= 0) | (hc <= 0)
    total = l_iou + l_dis + l_asp
    return overlap, l_iou, l_dis, l_asp, total, degenerate


def eiou_loss(pred, gt) -> LossBreakdown:
    pred, gt = BoxXYXY(*pred).validate(), BoxXYXY(*gt).validate()
    vals = eiou_terms(pred, gt)
    return LossBreakdown(*(float(v) for v in vals[:5]), degenerate=bool(vals[5]))


def _step(a, b):
    """d max(a, b) / da: 1 if a > b, 0 if a < b, 0.5 on ties."""
    return np.where(a > b, 1.0, np.where(a < b, 0.0, 0.5))


def eiou_grad_array(pred, gt) -> np.ndarray:
    """Analytic d(total)/d(pred x1, y1, x2, y2), shape ``(..., 4)``.

    Raises ``DegenerateBoxError`` if any pair has a zero enclosure extent.
    """
    px1, py1, px2, py2 = _split(pred)
    gx1, gy1, gx2, gy2 = _split(gt)
    wc = np.maximum(px2, gx2) - np.minimum(px1, gx1)
    hc = np.maximum(py2, gy2) - np.minimum(py1, gy1)
    if np.any(wc <= 0) or np.any(hc <= 0):
        raise DegenerateBoxError("enclosing box has zero width or height")

    # intersection and union
    ix = np.minimum(px2, gx2) - np.maximum(px1, gx1)
    iy = np.minimum(py2, gy2) - np.maximum(py1, gy1)
    overlapping = (ix > 0) & (iy > 0)
    iw = np.where(overlapping, ix, 0.0)
    ih = np.where(overlapping, iy, 0.0)
    inter = iw * ih
    pw, ph = px2 - px1, py2 - py1
    union = pw * ph + (gx2 - gx1) * (gy2 - gy1) - inter

    # d(iw)/d(px1, px2), d(ih)/d(py1, py2); zero when boxes do not overlap
    diw_dx1 = np.where(overlapping, -_step(px1, gx1), 0.0)
    diw_dx2 = np.where(overlapping, _step(gx2, px2), 0.0)
    dih_dy1 = np.where(overlapping, -_step(py1, gy1), 0.0)
    dih_dy2 = np.where(overlapping, _step(gy2, py2), 0.0)
    d_inter = np.stack([diw_dx1 * ih, dih_dy1 * iw, diw_dx2 * ih, dih_dy2 * iw], axis=-1)
    d_area = np.stack([-ph, -pw, ph, pw], axis=-1)
    d_union = d_area - d_inter
    inter_, union_ = inter[..., None], union[..., None]
    safe_union = np.where(union_ > 0, union_, 1.0)
    d_iou = np.where(union_ > 0, (d_inter * union_ - inter_ * d_union) / safe_union ** 2, 0.0)

    # enclosure extents
    dwc_dx1 = -_step(gx1, px1)
    dwc_dx2 = _step(px2, gx2)
    dhc_dy1 = -_step(gy1, py1)
    dhc_dy2 = _step(py2, gy2)
    zero = np.zeros_like(wc)
    d_wc = np.stack([dwc_dx1, zero, dwc_dx2, zero], axis=-1)
    d_hc = np.stack([zero, dhc_dy1, zero, dhc_dy2], axis=-1)

    # centre distance term
    dcx = ((px1 - gx1) + (px2 - gx2)) / 2.0
    dcy = ((py1 - gy1) + (py2 - gy2)) / 2.0
    dist = dcx * dcx + dcy * dcy
    diag = wc * wc + hc * hc
    d_dist = np.stack([dcx, dcy, dcx, dcy], axis=-1)
    d_diag = 2.0 * (wc[..., None] * d_wc + hc[..., None] * d_hc)
    d_dis = d_dist / diag[..., None] - dist[..., None] * d_diag / (diag ** 2)[..., None]

    # width / height terms
    dw = pw - (gx2 - gx1)
    dh = ph - (gy2 - gy1)
    d_dw = np.stack([-np.ones_like(dw), zero, np.ones_like(dw), zero], axis=-1)
    d_dh = np.stack([zero, -np.ones_like(dh), zero, np.ones_like(dh)], axis=-1)
    d_asp = (2.0 * dw[..., None] * d_dw / (wc * wc)[..., None]
             - 2.0 * (dw * dw)[..., None] * d_wc / (wc ** 3)[..., None]
             + 2.0 * dh[..., None] * d_dh / (hc * hc)[..., None]
             - 2.0 * (dh * dh)[..., None] * d_hc / (hc ** 3)[..., None])

    return -d_iou + d_dis + d_asp


def eiou_grad(pred, gt) -> np.ndarray:
    """Gradient of ``eiou_loss(pred, gt).total`` w.r.t. the pred box, as a 4-vector."""
    pred, gt = BoxXYXY(*pred).validate(), BoxXYXY(*gt).validate()
    return eiou_grad_array(pred, gt)


def eiou_loss_batch(pred, gt):
    """EIoU for ``N x 4`` box arrays; returns a dict of per-pair arrays."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 4)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 4)
    if pred.shape != gt.shape:
        raise ValueError(f"box arrays differ in shape: {pred.shape} vs {gt.shape}")
    if np.any(pred[:, 2:] < pred[:, :2]) or np.any(gt[:, 2:] < gt[:, :2]):
        raise ValueError("invalid box: need x2 >= x1 and y2 >= y1")
    names = ("iou", "l_iou", "l_dis", "l_asp", "total", "degenerate")
    return dict(zip(names, eiou_terms(pred, gt)))
