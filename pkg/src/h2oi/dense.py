"""Anchor grid, ground-truth assignment, and the interaction-branch losses.

Every loss returns ``(loss, gradient)`` with the gradient taken with respect
to the prediction array it was given.  Dense maps are handled in *flat* form:
one row per anchor in (level, y, x, anchor) order, which is exactly the
row-major order of the per-level ``[H, W, A, C]`` planes concatenated.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .taxonomy import builtin_taxonomy

N_VERBS = 51
EPS = 1e-7
POSITIVE_IOU = 0.5


@dataclass(frozen=True)
class AnchorGridConfig:
    strides: tuple = (8, 16, 32, 64, 128)
    scales: tuple = (1.0, 2 ** (1 / 3), 2 ** (2 / 3))
    ratios: tuple = (0.5, 1.0, 2.0)  # width / height
    base_size: float = 4.0  # anchor side = base_size * stride * scale

    @property
    def anchors_per_cell(self):
        return len(self.scales) * len(self.ratios)

    def to_dict(self):
        return {"strides": list(self.strides), "scales": list(self.scales),
                "ratios": list(self.ratios), "base_size": self.base_size}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["strides"]), tuple(d["scales"]), tuple(d["ratios"]),
                   float(d["base_size"]))


class AnchorGrid:
    """Anchor boxes tiling every pyramid level of one padded image."""

    def __init__(self, image_size, config: AnchorGridConfig | None = None):
        config = config or AnchorGridConfig()
        if not config.strides:
            raise ValueError("anchor grid needs at least one level")
        width, height = image_size
        self.image_size = (int(width), int(height))
        self.config = config
        self.A = config.anchors_per_cell

        shapes = []
        for s in config.strides:
            shapes.append((math.ceil(height / s), math.ceil(width / s)))
        self.level_shapes = shapes
        sizes = [h * w * self.A for h, w in shapes]
        self.level_offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        self.boxes = np.concatenate([self._level_boxes(s, h, w) for s, (h, w)
                                     in zip(config.strides, shapes)])

    def _level_boxes(self, stride, h, w):
        cfg = self.config
        shapes = []
        for scale in cfg.scales:
            for r in cfg.ratios:
                side = cfg.base_size * stride * scale
                shapes.append((side * math.sqrt(r), side / math.sqrt(r)))
        shapes = np.array(shapes)  # [A, 2] (w, h)
        cy, cx = np.meshgrid((np.arange(h) + 0.5) * stride, (np.arange(w) + 0.5) * stride,
                             indexing="ij")
        out = np.empty((h, w, self.A, 4))
        out[..., 0] = cx[:, :, None] - shapes[None, None, :, 0] / 2
        out[..., 1] = cy[:, :, None] - shapes[None, None, :, 1] / 2
        out[..., 2] = shapes[None, None, :, 0]
        out[..., 3] = shapes[None, None, :, 1]
        return out.reshape(-1, 4)

    def __len__(self):
        return int(self.level_offsets[-1])

    @property
    def n_levels(self):
        return len(self.level_shapes)

    def flat_index(self, ref) -> int:
        level, y, x, a = (int(v) for v in ref)
        if not 0 <= level < self.n_levels:
            raise IndexError(f"anchor level {level} out of range")
        h, w = self.level_shapes[level]
        if not (0 <= y < h and 0 <= x < w and 0 <= a < self.A):
            raise IndexError(f"anchor ref {tuple(ref)} outside level {level} grid {h}x{w}x{self.A}")
        return int(self.level_offsets[level]) + (y * w + x) * self.A + a

    def anchor_ref(self, idx) -> tuple:
        idx = int(idx)
        if not 0 <= idx < len(self):
            raise IndexError(idx)
        level = int(np.searchsorted(self.level_offsets, idx, side="right")) - 1
        rem = idx - int(self.level_offsets[level])
        w = self.level_shapes[level][1]
        cell, a = divmod(rem, self.A)
        y, x = divmod(cell, w)
        return (level, y, x, a)

    def level_of(self, idx):
        return np.searchsorted(self.level_offsets, idx, side="right") - 1


# ---------------------------------------------------------------------------
# Dense map bundle
# ---------------------------------------------------------------------------


@dataclass
class LevelMaps:
    verb: np.ndarray        # [H, W, A, 2V]
    presence: np.ndarray    # [H, W, A, V]
    embedding: np.ndarray   # [H, W, A, T]


@dataclass
class DenseMapBundle:
    grid: AnchorGrid
    levels: list
    n_verbs: int = N_VERBS

    @property
    def embed_dim(self):
        return self.levels[0].embedding.shape[-1]

    @classmethod
    def zeros(cls, grid, n_verbs=N_VERBS, embed_dim=16, dtype=np.float32):
        levels = []
        for h, w in grid.level_shapes:
            levels.append(LevelMaps(np.zeros((h, w, grid.A, 2 * n_verbs), dtype),
                                    np.zeros((h, w, grid.A, n_verbs), dtype),
                                    np.zeros((h, w, grid.A, embed_dim), dtype)))
        return cls(grid, levels, n_verbs)

    @classmethod
    def from_flat(cls, grid, verb, presence, embedding, n_verbs=N_VERBS):
        levels = []
        for lvl, (h, w) in enumerate(grid.level_shapes):
            lo, hi = grid.level_offsets[lvl], grid.level_offsets[lvl + 1]
            levels.append(LevelMaps(verb[lo:hi].reshape(h, w, grid.A, -1),
                                    presence[lo:hi].reshape(h, w, grid.A, -1),
                                    embedding[lo:hi].reshape(h, w, grid.A, -1)))
        return cls(grid, levels, n_verbs)

    def flat(self):
        """``(verb [N, 2V], presence [N, V], embedding [N, T])`` over all anchors."""
        def cat(name):
            return np.concatenate([getattr(lv, name).reshape(-1, getattr(lv, name).shape[-1])
                                   for lv in self.levels])
        return cat("verb"), cat("presence"), cat("embedding")

    def check(self):
        if len(self.levels) != self.grid.n_levels:
            raise ValueError("bundle/grid level count mismatch")
        v = self.n_verbs
        for (h, w), lv in zip(self.grid.level_shapes, self.levels):
            A = self.grid.A
            if (lv.verb.shape != (h, w, A, 2 * v) or lv.presence.shape != (h, w, A, v)
                    or lv.embedding.shape[:3] != (h, w, A)):
                raise ValueError("bundle/grid shape mismatch")
            for arr in (lv.verb, lv.presence, lv.embedding):
                if not np.all(np.isfinite(arr)):
                    raise ValueError("bundle holds non-finite values")
            for arr in (lv.verb, lv.presence):
                if arr.size and (arr.min() < 0 or arr.max() > 1):
                    raise ValueError("probability plane outside [0, 1]")


# ---------------------------------------------------------------------------
# Assignment
# ---------------------------------------------------------------------------


@dataclass
class Assignment:
    n_anchors: int
    owner: np.ndarray                 # [N] instance id owning the anchor, -1 if none
    instance_anchors: dict            # instance id -> flat anchor indices
    uncovered: list                   # instances without any positive anchor
    a_plus: np.ndarray                # flat indices of anchors of interacting instances
    verb_labels: np.ndarray           # [N, 2V] uint8, active then passive channels
    presence_rows: np.ndarray         # subject anchors carrying presence labels
    presence_labels: np.ndarray       # [N, V] uint8
    groups: list = field(default_factory=list)          # arrays of flat anchor indices
    group_instances: list = field(default_factory=list)  # tuples of instance ids


class _DisjointSet:
    def __init__(self):
        self.parent = {}

    def find(self, x):
        self.parent.setdefault(x, x)
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def interaction_components(scene):
    """Instances linked by a target or instrument, as sorted id tuples.

    Only instances touched by a non-empty target/instrument appear.
    """
    ds = _DisjointSet()
    for ia in scene.interactions:
        for other in (ia.target_id, ia.instrument_id):
            if other is not None:
                ds.union(ia.subject_id, other)
    comps = {}
    for x in list(ds.parent):
        comps.setdefault(ds.find(x), []).append(x)
    return sorted(tuple(sorted(c)) for c in comps.values())


def assign_anchors(grid: AnchorGrid, scene, tax=None) -> Assignment:
    tax = tax or builtin_taxonomy()
    v = len(tax)
    n = len(grid)
    insts = sorted(scene.instances, key=lambda i: i.id)
    ids = np.array([i.id for i in insts], dtype=np.int64)
    owner = np.full(n, -1, dtype=np.int64)
    if insts:
        ov = kernels.iou_matrix(grid.boxes, np.array([i.bbox.to_list() for i in insts]))
        best = np.argmax(ov, axis=1)  # first max -> lowest instance id
        pos = ov[np.arange(n), best] >= POSITIVE_IOU
        owner[pos] = ids[best[pos]]
    instance_anchors = {int(i): np.nonzero(owner == i)[0] for i in ids}
    uncovered = [i for i, a in instance_anchors.items() if a.size == 0]
    persons = {i.id for i in insts if i.is_person}

    verb_labels = np.zeros((n, 2 * v), dtype=np.uint8)
    presence_labels = np.zeros((n, v), dtype=np.uint8)
    interacting, subjects = set(), set()
    for ia in scene.interactions:
        k = tax.lookup(ia.verb).id
        s_anchors = instance_anchors.get(ia.subject_id, np.zeros(0, np.int64))
        verb_labels[s_anchors, k] = 1
        interacting.add(ia.subject_id)
        subjects.add(ia.subject_id)
        if ia.target_id is not None:
            presence_labels[s_anchors, k] = 1
            interacting.add(ia.target_id)
            if ia.target_id in persons:
                verb_labels[instance_anchors[ia.target_id], v + k] = 1
        if ia.instrument_id is not None:
            interacting.add(ia.instrument_id)

    def anchors_of(members):
        parts = [instance_anchors.get(i, np.zeros(0, np.int64)) for i in members]
        return np.unique(np.concatenate(parts)) if parts else np.zeros(0, np.int64)

    comps = interaction_components(scene)
    groups, group_instances = [], []
    for comp in comps:
        g = anchors_of(comp)
        if g.size:
            groups.append(g)
            group_instances.append(comp)

    return Assignment(
        n_anchors=n,
        owner=owner,
        instance_anchors=instance_anchors,
        uncovered=uncovered,
        a_plus=anchors_of(sorted(interacting)),
        verb_labels=verb_labels,
        presence_rows=anchors_of(sorted(subjects)),
        presence_labels=presence_labels,
        groups=groups,
        group_instances=group_instances,
    )


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FocalParams:
    alpha: float = 0.25
    gamma: float = 2.0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must be in (0, 1]")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")


def _check_rows(pred, labels, name):
    if pred.shape != labels.shape:
        raise ValueError(f"{name}: prediction shape {pred.shape} != label shape {labels.shape}")


def focal_loss(verb_map, assignment: Assignment, params: FocalParams = FocalParams()):
    """Summed focal loss over the A+ anchors and every verb channel.

    ``verb_map`` is the flat ``[N, 2V]`` active/passive verb plane.  The
    alpha weight applies to both label values.
    """
    verb_map = np.asarray(verb_map, dtype=np.float64)
    _check_rows(verb_map, assignment.verb_labels, "focal_loss")
    return kernels.focal(verb_map, assignment.verb_labels, assignment.a_plus,
                         params.alpha, params.gamma, EPS)


def presence_loss(presence_map, assignment: Assignment):
    """Mean binary cross-entropy over (subject anchor, verb) cells."""
    p = np.asarray(presence_map, dtype=np.float64)
    _check_rows(p, assignment.presence_labels, "presence_loss")
    grad = np.zeros_like(p)
    rows = assignment.presence_rows
    if rows.size == 0:
        return 0.0, grad
    pr = p[rows]
    y = assignment.presence_labels[rows].astype(np.float64)
    pc = np.clip(pr, EPS, 1.0 - EPS)
    cells = pr.size
    loss = -np.sum(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)) / cells
    g = (-(y / pc) + (1.0 - y) / (1.0 - pc)) / cells
    g[(pr <= EPS) | (pr >= 1.0 - EPS)] = 0.0
    grad[rows] = g
    return float(loss), grad


def pull_push_loss(embedding_map, groups, margin=1.0):
    """Group-mean associative embedding loss.

    pull: mean over groups of the mean squared distance of members to their
    group mean; push: mean over unordered group pairs of
    ``max(0, margin - |mean_g - mean_h|)**2``.
    """
    e = np.asarray(embedding_map, dtype=np.float64)
    if len(groups) == 0:
        raise ValueError("pull_push_loss needs at least one group")
    grad = np.zeros_like(e)
    n_groups = len(groups)
    means = np.empty((n_groups, e.shape[1]))
    pull = 0.0
    for gi, g in enumerate(groups):
        g = np.asarray(g)
        if g.size == 0:
            raise ValueError(f"group {gi} is empty")
        members = e[g]
        mu = members.mean(axis=0)
        means[gi] = mu
        diff = members - mu
        pull += np.sum(diff * diff) / g.size
        np.add.at(grad, g, 2.0 * diff / (g.size * n_groups))
    pull /= n_groups

    push = 0.0
    n_pairs = n_groups * (n_groups - 1) // 2
    if n_pairs:
        gmu = np.zeros_like(means)
        for i in range(n_groups):
            for j in range(i + 1, n_groups):
                d_vec = means[i] - means[j]
                d = math.sqrt(float(d_vec @ d_vec))
                if d >= margin:
                    continue
                push += (margin - d) ** 2
                if d > 0:
                    c = -2.0 * (margin - d) / d * d_vec / n_pairs
                    gmu[i] += c
                    gmu[j] -= c
        push /= n_pairs
        for gi, g in enumerate(groups):
            g = np.asarray(g)
            np.add.at(grad, g, np.broadcast_to(gmu[gi] / g.size, (g.size, e.shape[1])))
    return float(pull + push), grad


def interaction_loss(bundle: DenseMapBundle, assignment: Assignment, params=FocalParams(),
                     margin=1.0, weights=(1.0, 1.0, 1.0)):
    """Weighted sum of the three branch losses; returns ``(total, parts)``."""
    verb, presence, embedding = bundle.flat()
    fl, _ = focal_loss(verb, assignment, params)
    pl, _ = presence_loss(presence, assignment)
    el = pull_push_loss(embedding, assignment.groups, margin)[0] if assignment.groups else 0.0
    parts = {"focal": fl, "presence": pl, "pull_push": el}
    total = weights[0] * fl + weights[1] * pl + weights[2] * el
    return total, parts


def grad_check(loss_kernel, x, epsilon=1e-5, n_coords=200, seed=0, coords=None):
    """Max relative error between analytic and central-difference gradients.

    ``loss_kernel(x) -> (loss, grad)``.  Samples ``n_coords`` coordinates
    (with replacement when the array is smaller) unless ``coords`` is given.
    """
    if not 0.0 < epsilon <= 1e-2:
        raise ValueError("epsilon must be in (0, 1e-2]")
    x = np.array(x, dtype=np.float64)
    _, analytic = loss_kernel(x)
    flat = x.reshape(-1)
    if coords is None:
        rng = np.random.default_rng(seed)
        coords = rng.choice(flat.size, size=n_coords, replace=flat.size < n_coords)
    worst = 0.0
    for c in coords:
        orig = flat[c]
        flat[c] = orig + epsilon
        lp, _ = loss_kernel(x)
        flat[c] = orig - epsilon
        lm, _ = loss_kernel(x)
        flat[c] = orig
        num = (lp - lm) / (2 * epsilon)
        ana = analytic.reshape(-1)[c]
        err = abs(num - ana) / max(abs(num), abs(ana), 1e-8)
        worst = max(worst, err)
    return worst
