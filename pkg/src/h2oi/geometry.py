"""Box IoU and class-wise greedy NMS."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .datamodel import BBox

NMS_THRESHOLD = 0.5
SCORE_FLOOR = 0.05
TOP_K = 100


@dataclass(frozen=True)
class Detection:
    bbox: BBox
    class_name: str
    score: float
    anchor_ref: Optional[tuple] = None  # (level, y, x, anchor)

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score must be in [0, 1], got {self.score}")

    @property
    def is_person(self):
        return self.class_name == "person"


def iou(a: BBox, b: BBox) -> float:
    iw = max(0.0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    ih = max(0.0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = iw * ih
    return inter / (a.w * a.h + b.w * b.h - inter)


def boxes_array(boxes) -> np.ndarray:
    if len(boxes) == 0:
        return np.zeros((0, 4))
    return np.array([b.to_list() for b in boxes], dtype=np.float64)


def iou_matrix(a, b) -> np.ndarray:
    """Pairwise IoU between two box collections (BBox lists or ``[N, 4]`` arrays)."""
    if not isinstance(a, np.ndarray):
        a = boxes_array(a)
    if not isinstance(b, np.ndarray):
        b = boxes_array(b)
    return kernels.iou_matrix(a, b)


def _priority(dets):
    return sorted(range(len(dets)), key=lambda i: (-dets[i].score, dets[i].class_name, i))


def nms(dets, iou_threshold=NMS_THRESHOLD):
    """Greedy per-class suppression; kept detections in priority order.

    Priority is descending score, then class name, then input position.  A
    detection is dropped when a kept one of the same class overlaps it with
    IoU strictly above the threshold.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError("iou_threshold must be in (0, 1)")
    if not dets:
        return []
    order = _priority(dets)
    codes = {}
    classes = np.array([codes.setdefault(dets[i].class_name, len(codes)) for i in order])
    keep = kernels.greedy_nms(boxes_array([dets[i].bbox for i in order]), classes, iou_threshold)
    return [dets[i] for i, k in zip(order, keep) if k]


def nms_reference(dets, iou_threshold=NMS_THRESHOLD):
    """Quadratic pure-Python NMS used as the oracle for ``nms``."""
    kept = []
    for i in _priority(dets):
        d = dets[i]
        if all(k.class_name != d.class_name or iou(k.bbox, d.bbox) <= iou_threshold
               for k in kept):
            kept.append(d)
    return kept


def postprocess(dets, iou_threshold=NMS_THRESHOLD, score_floor=SCORE_FLOOR, top_k=TOP_K):
    """Score floor, then NMS, then keep the ``top_k`` best detections."""
    dets = [d for d in dets if d.score >= score_floor]
    return nms(dets, iou_threshold)[:top_k]
