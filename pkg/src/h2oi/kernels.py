"""Hot numeric kernels, each in a numba and a pure-numpy flavour.

The public names at the bottom of the module are bound to one flavour at
import time according to ``H2OI_BACKEND`` (see ``_backend``).  Both flavours
stay importable under ``*_nb`` / ``*_np`` so they can be cross-checked and
benchmarked against each other.

Boxes are ``[x, y, w, h]`` rows (top-left corner + size) in float64.
"""
import math

import numpy as np

from ._backend import njit, use_numba

# ---------------------------------------------------------------------------
# IoU
# ---------------------------------------------------------------------------


def iou_matrix_np(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ax1, ay1 = a[:, 0][:, None], a[:, 1][:, None]
    ax2, ay2 = ax1 + a[:, 2][:, None], ay1 + a[:, 3][:, None]
    bx1, by1 = b[:, 0][None, :], b[:, 1][None, :]
    bx2, by2 = bx1 + b[:, 2][None, :], by1 + b[:, 3][None, :]
    iw = np.maximum(0.0, np.minimum(ax2, bx2) - np.maximum(ax1, bx1))
    ih = np.maximum(0.0, np.minimum(ay2, by2) - np.maximum(ay1, by1))
    inter = iw * ih
    union = (a[:, 2] * a[:, 3])[:, None] + (b[:, 2] * b[:, 3])[None, :] - inter
    return inter / union


@njit(cache=True)
def _iou_matrix_nb(a, b):
    n, m = a.shape[0], b.shape[0]
    out = np.zeros((n, m))
    for i in range(n):
        ax1 = a[i, 0]
        ay1 = a[i, 1]
        ax2 = ax1 + a[i, 2]
        ay2 = ay1 + a[i, 3]
        area_a = a[i, 2] * a[i, 3]
        for j in range(m):
            bx1 = b[j, 0]
            by1 = b[j, 1]
            bx2 = bx1 + b[j, 2]
            by2 = by1 + b[j, 3]
            iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
            ih = max(0.0, min(ay2, by2) - max(ay1, by1))
            inter = iw * ih
            out[i, j] = inter / (area_a + b[j, 2] * b[j, 3] - inter)
    return out


def iou_matrix_nb(a, b):
    a = np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.ascontiguousarray(b, dtype=np.float64).reshape(-1, 4)
    return _iou_matrix_nb(a, b)


# ---------------------------------------------------------------------------
# Greedy class-wise NMS over rows already sorted by priority
# ---------------------------------------------------------------------------


def greedy_nms_np(boxes, classes, threshold):
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    classes = np.asarray(classes)
    n = boxes.shape[0]
    keep = np.zeros(n, dtype=np.bool_)
    alive = np.ones(n, dtype=np.bool_)
    for i in range(n):
        if not alive[i]:
            continue
        keep[i] = True
        rest = np.nonzero(alive[i + 1:] & (classes[i + 1:] == classes[i]))[0] + i + 1
        if rest.size:
            ov = iou_matrix_np(boxes[i:i + 1], boxes[rest])[0]
            alive[rest[ov > threshold]] = False
    return keep


@njit(cache=True)
def _greedy_nms_nb(boxes, classes, threshold):
    n = boxes.shape[0]
    keep = np.zeros(n, dtype=np.bool_)
    kept = np.empty(n, dtype=np.int64)
    nk = 0
    for i in range(n):
        ax1 = boxes[i, 0]
        ay1 = boxes[i, 1]
        ax2 = ax1 + boxes[i, 2]
        ay2 = ay1 + boxes[i, 3]
        area_a = boxes[i, 2] * boxes[i, 3]
        ok = True
        for k in range(nk):
            j = kept[k]
            if classes[j] != classes[i]:
                continue
            bx1 = boxes[j, 0]
            by1 = boxes[j, 1]
            bx2 = bx1 + boxes[j, 2]
            by2 = by1 + boxes[j, 3]
            iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
            ih = max(0.0, min(ay2, by2) - max(ay1, by1))
            inter = iw * ih
            # same operand order as the numpy path: kept box is "a"
            union = boxes[j, 2] * boxes[j, 3] + area_a - inter
            if inter / union > threshold:
                ok = False
                break
        if ok:
            keep[i] = True
            kept[nk] = i
            nk += 1
    return keep


def greedy_nms_nb(boxes, classes, threshold):
    boxes = np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 4)
    classes = np.ascontiguousarray(classes, dtype=np.int64)
    return _greedy_nms_nb(boxes, classes, float(threshold))


# ---------------------------------------------------------------------------
# Focal loss over a row subset (the A+ anchors)
# ---------------------------------------------------------------------------


def focal_np(p, labels, rows, alpha, gamma, eps):
    p = np.asarray(p, dtype=np.float64)
    grad = np.zeros_like(p)
    if rows.size == 0:
        return 0.0, grad
    pr = p[rows]
    y = labels[rows].astype(bool)
    pc = np.clip(pr, eps, 1.0 - eps)
    q = np.where(y, pc, 1.0 - pc)
    om = 1.0 - q
    loss = float(np.sum(-alpha * om ** gamma * np.log(q)))
    dq = alpha * (gamma * om ** (gamma - 1.0) * np.log(q) - om ** gamma / q)
    g = np.where(y, dq, -dq)
    g[(pr <= eps) | (pr >= 1.0 - eps)] = 0.0
    grad[rows] = g
    return loss, grad


@njit(cache=True)
def _focal_nb(p, labels, rows, alpha, gamma, eps):
    grad = np.zeros(p.shape)
    c = p.shape[1]
    loss = 0.0
    for r in range(rows.shape[0]):
        i = rows[r]
        for k in range(c):
            raw = p[i, k]
            pc = min(max(raw, eps), 1.0 - eps)
            if labels[i, k] != 0:
                q = pc
            else:
                q = 1.0 - pc
            om = 1.0 - q
            lq = math.log(q)
            # one pow per cell: om**gamma = om**(gamma-1) * om
            if gamma == 2.0:
                pm1 = om
            elif gamma == 0.0:
                pm1 = 0.0
            else:
                pm1 = om ** (gamma - 1.0)
            pg = 1.0 if gamma == 0.0 else pm1 * om
            loss += -alpha * pg * lq
            if raw <= eps or raw >= 1.0 - eps:
                continue
            dq = alpha * (gamma * pm1 * lq - pg / q)
            grad[i, k] = dq if labels[i, k] != 0 else -dq
    return loss, grad


def focal_nb(p, labels, rows, alpha, gamma, eps):
    p = np.ascontiguousarray(p, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    rows = np.ascontiguousarray(rows, dtype=np.int64)
    loss, grad = _focal_nb(p, labels, rows, float(alpha), float(gamma), float(eps))
    return float(loss), grad


# ---------------------------------------------------------------------------
# Decoder scoring: affinity matrix and the dense (subject, verb, target) tensor
# ---------------------------------------------------------------------------


def affinity_np(emb, bandwidth):
    emb = np.asarray(emb, dtype=np.float64)
    diff = emb[:, None, :] - emb[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    return 1.0 / (1.0 + dist / bandwidth)


@njit(cache=True)
def _affinity_nb(emb, bandwidth):
    d, t = emb.shape
    out = np.ones((d, d))
    for i in range(d):
        for j in range(i + 1, d):
            s = 0.0
            for k in range(t):
                x = emb[i, k] - emb[j, k]
                s += x * x
            a = 1.0 / (1.0 + math.sqrt(s) / bandwidth)
            out[i, j] = a
            out[j, i] = a
    return out


def affinity_nb(emb, bandwidth):
    emb = np.ascontiguousarray(emb, dtype=np.float64)
    return _affinity_nb(emb, float(bandwidth))


def triplet_scores_np(act, pres, aff, legal, is_subject):
    """Dense ``[D, V, D]`` target scores and ``[D, V]`` empty-target scores.

    Every detection row is scored as a subject and non-subjects are masked
    afterwards, so the work depends only on ``D``.
    """
    act = np.asarray(act, dtype=np.float64)
    pres = np.asarray(pres, dtype=np.float64)
    d = act.shape[0]
    scores = (act * pres)[:, :, None] * aff[:, None, :] * legal[None, :, :]
    scores[np.arange(d), :, np.arange(d)] = 0.0
    scores *= is_subject[:, None, None]
    null = act * (1.0 - pres) * is_subject[:, None]
    return scores, null


@njit(cache=True)
def _triplet_scores_nb(act, pres, aff, legal, is_subject):
    d, v = act.shape
    scores = np.zeros((d, v, d))
    null = np.zeros((d, v))
    for s in range(d):
        m = 1.0 if is_subject[s] else 0.0
        for k in range(v):
            ap = act[s, k] * pres[s, k]
            null[s, k] = act[s, k] * (1.0 - pres[s, k]) * m
            for t in range(d):
                if t == s or not legal[k, t]:
                    continue
                scores[s, k, t] = ap * aff[s, t] * m
    return scores, null


def triplet_scores_nb(act, pres, aff, legal, is_subject):
    return _triplet_scores_nb(
        np.ascontiguousarray(act, dtype=np.float64),
        np.ascontiguousarray(pres, dtype=np.float64),
        np.ascontiguousarray(aff, dtype=np.float64),
        np.ascontiguousarray(legal, dtype=np.bool_),
        np.ascontiguousarray(is_subject, dtype=np.bool_),
    )


if use_numba():
    BACKEND = "numba"
    iou_matrix = iou_matrix_nb
    greedy_nms = greedy_nms_nb
    focal = focal_nb
    affinity = affinity_nb
    triplet_scores = triplet_scores_nb
else:
    BACKEND = "numpy"
    iou_matrix = iou_matrix_np
    greedy_nms = greedy_nms_np
    focal = focal_np
    affinity = affinity_np
    triplet_scores = triplet_scores_np
