"""Greedy NMS and Gaussian Soft-NMS over scored detections.

Both are deterministic: equal scores are broken by original list index (the
earlier detection wins), and outputs are ordered by score descending with
the same tie rule.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Sequence

import numpy as np

from .losses import BoxXYXY, iou_array


@dataclass(frozen=True)
class Detection:
    box: BoxXYXY
    score: float
    class_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "box", BoxXYXY(*map(float, self.box)).validate())
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")
        if self.class_id < 0:
            raise ValueError(f"class_id must be >= 0, got {self.class_id}")


@dataclass(frozen=True)
class SoftNmsParams:
    sigma_s: float = 0.5
    score_floor: float = 0.001
    per_class: bool = True

    def __post_init__(self):
        if not self.sigma_s > 0:
            raise ValueError(f"sigma_s must be > 0, got {self.sigma_s}")
        if not 0.0 <= self.score_floor < 1.0:
            raise ValueError(f"score_floor must be in [0, 1), got {self.score_floor}")


def _groups(dets: Sequence[Detection], per_class: bool) -> Iterable[np.ndarray]:
    if not per_class:
        yield np.arange(len(dets))
        return
    classes = np.array([d.class_id for d in dets])
    for c in np.unique(classes):
        yield np.flatnonzero(classes == c)


def _boxes(dets: Sequence[Detection]) -> np.ndarray:
    return np.array([d.box for d in dets], dtype=np.float64).reshape(-1, 4)


def _argmax_first(scores: np.ndarray, alive: np.ndarray) -> int:
    masked = np.where(alive, scores, -np.inf)
    return int(np.argmax(masked))  # argmax returns the first (lowest index) maximum


def nms(dets: Sequence[Detection], iou_thresh: float, per_class: bool = False) -> List[Detection]:
    """Greedy NMS: keep the best detection, drop others with IoU > ``iou_thresh``; repeat."""
    if not 0.0 < iou_thresh < 1.0:
        raise ValueError(f"iou_thresh must be in (0, 1), got {iou_thresh}")
    dets = list(dets)
    if not dets:
        return []
    boxes = _boxes(dets)
    scores = np.array([d.score for d in dets], dtype=np.float64)
    kept = []
    for idx in _groups(dets, per_class):
        alive = np.ones(len(idx), dtype=bool)
        s = scores[idx]
        b = boxes[idx]
        while alive.any():
            i = _argmax_first(s, alive)
            kept.append(idx[i])
            alive[i] = False
            overlap = iou_array(b[i], b)
            alive &= ~(overlap > iou_thresh)
    kept.sort(key=lambda j: (-scores[j], j))
    return [dets[j] for j in kept]


def soft_nms_scores(boxes: np.ndarray, scores: np.ndarray, sigma_s: float) -> np.ndarray:
    """Rescored copy of ``scores`` after one Gaussian Soft-NMS sweep over a single group.

    At each step the highest remaining score is fixed; every other remaining
    score is multiplied by ``exp(-IoU^2 / sigma_s)``.
    """
    scores = np.array(scores, dtype=np.float64)
    alive = np.ones(len(scores), dtype=bool)
    while alive.any():
        i = _argmax_first(scores, alive)
        alive[i] = False
        if not alive.any():
            break
        rest = np.flatnonzero(alive)
        overlap = iou_array(boxes[i], boxes[rest])
        scores[rest] *= np.exp(-(overlap * overlap) / sigma_s)
    return scores


def soft_nms(dets: Sequence[Detection], p: SoftNmsParams = SoftNmsParams()) -> List[Detection]:
    dets = list(dets)
    if not dets:
        return []
    boxes = _boxes(dets)
    final = np.array([d.score for d in dets], dtype=np.float64)
    for idx in _groups(dets, p.per_class):
        final[idx] = soft_nms_scores(boxes[idx], final[idx], p.sigma_s)
    order = sorted(range(len(dets)), key=lambda j: (-final[j], j))
    return [
        Detection(dets[j].box, float(final[j]), dets[j].class_id)
        for j in order
        if final[j] >= p.score_floor
    ]
