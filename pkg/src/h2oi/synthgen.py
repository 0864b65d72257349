"""Seeded synthetic scenes and the perfect dense maps a flawless model would emit.

Scenes are built from small interaction clusters.  Within a cluster every
verb that has a target takes *all* legal candidates of the cluster as
targets, and a cluster member is never a legal-but-unused candidate.  That
is what lets ``decode(render_perfect_bundle(scene))`` reproduce the ground
truth exactly: embeddings separate clusters, never members of one cluster.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .datamodel import COCO_CLASSES, OTHER_CLASS, BBox, Instance, InteractionAnnotation, Scene
from .dense import AnchorGrid, AnchorGridConfig, DenseMapBundle, assign_anchors
from .geometry import Detection, iou_matrix
from .taxonomy import Category, builtin_taxonomy, validate_scene

OBJECT_CLASSES = tuple(c for c in COCO_CLASSES if c != "person")
NON_EXCLUSIVE = (Category.OBJECT_INTERACTION, Category.SOCIAL, Category.VIOLENT)


class PlacementError(RuntimeError):
    pass


class AnchorCollisionError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseModel:
    sigma_p: float = 0.0   # probability planes
    sigma_e: float = 0.0   # embeddings
    sigma_box: float = 0.0  # detection boxes, fraction of box size

    def __post_init__(self):
        if min(self.sigma_p, self.sigma_e, self.sigma_box) < 0:
            raise ValueError("noise sigmas must be >= 0")


@dataclass(frozen=True)
class SynthConfig:
    image_size: tuple = (256, 256)
    n_persons: tuple = (1, 4)          # inclusive range
    n_objects: tuple = (0, 4)
    verbs_per_person: tuple = (0, 2)   # non-exclusive verbs per person
    categories: tuple = NON_EXCLUSIVE  # where non-exclusive verbs are drawn from
    p_person_pair: float = 0.35        # a cluster takes a second person
    p_distractor: float = 0.25         # object left out of every cluster
    p_support_target: float = 0.5      # posture/motion get the single candidate
    p_empty_target: float = 0.2        # non-exclusive verb annotated without target
    p_other_class: float = 0.15        # object outside the class registry
    max_objects_per_cluster: int = 2
    max_iou: float = 0.3
    max_retries: int = 200
    grid: AnchorGridConfig = field(default_factory=AnchorGridConfig)
    embed_dim: int = 16
    codeword_spacing: float = 24.0
    noise: NoiseModel = field(default_factory=NoiseModel)

    def __post_init__(self):
        for name in ("n_persons", "n_objects", "verbs_per_person"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise ValueError(f"{name} range is empty")
        if self.n_persons[0] < 1:
            raise ValueError("scenes need at least one person")


def _placeable_anchors(grid):
    w, h = grid.image_size
    b = grid.boxes
    inside = (b[:, 0] >= 0) & (b[:, 1] >= 0) & (b[:, 0] + b[:, 2] <= w) & (b[:, 1] + b[:, 3] <= h)
    return np.nonzero(inside)[0]


def _place(rng, grid, candidates, n, max_iou, retries):
    if n and len(candidates) == 0:
        raise PlacementError("no anchor fits inside the image")
    chosen = []
    for _ in range(n):
        for _ in range(retries):
            idx = int(candidates[rng.integers(len(candidates))])
            if chosen:
                ov = iou_matrix(grid.boxes[idx:idx + 1], grid.boxes[chosen])
                if ov.max() > max_iou:
                    continue
            chosen.append(idx)
            break
        else:
            raise PlacementError(f"could not place {n} instances after {retries} retries")
    return chosen


def generate_scene(cfg: SynthConfig = SynthConfig(), seed=0, image_id=None, tax=None) -> Scene:
    """Deterministic scene for ``(cfg, seed)`` satisfying every taxonomy rule."""
    tax = tax or builtin_taxonomy()
    rng = np.random.default_rng(seed)
    image_id = seed if image_id is None else image_id
    grid = AnchorGrid(cfg.image_size, cfg.grid)

    n_p = int(rng.integers(cfg.n_persons[0], cfg.n_persons[1] + 1))
    n_o = int(rng.integers(cfg.n_objects[0], cfg.n_objects[1] + 1))
    slots = _place(rng, grid, _placeable_anchors(grid), n_p + n_o, cfg.max_iou, cfg.max_retries)

    instances = []
    for k, anchor in enumerate(slots):
        if k < n_p:
            cls = "person"
        elif rng.random() < cfg.p_other_class:
            cls = OTHER_CLASS
        else:
            cls = OBJECT_CLASSES[rng.integers(len(OBJECT_CLASSES))]
        instances.append(Instance(image_id * 1000 + k, image_id,
                                  BBox(*(float(c) for c in grid.boxes[anchor])), cls))
    persons, objects = instances[:n_p], instances[n_p:]

    clusters = []
    queue = list(rng.permutation(n_p))
    while queue:
        c = [persons[queue.pop()]]
        if queue and rng.random() < cfg.p_person_pair:
            c.append(persons[queue.pop()])
        clusters.append(c)
    for obj in objects:
        if rng.random() < cfg.p_distractor:
            continue
        open_ = [c for c in clusters
                 if sum(not m.is_person for m in c) < cfg.max_objects_per_cluster]
        if open_:
            open_[rng.integers(len(open_))].append(obj)

    posture = tax.in_category(Category.POSTURE)
    motion = tax.in_category(Category.MOTION)
    pool = [v for v in tax if v.category in cfg.categories]
    interactions = []
    for cluster in clusters:
        for s in (m for m in cluster if m.is_person):
            cands = [m for m in cluster if m.id != s.id]
            support = None
            if len(cands) == 1 and rng.random() < cfg.p_support_target:
                support = cands[0].id
            interactions.append(InteractionAnnotation(
                s.id, posture[rng.integers(len(posture))].name, support))
            interactions.append(InteractionAnnotation(
                s.id, motion[rng.integers(len(motion))].name, support))

            k = int(rng.integers(cfg.verbs_per_person[0], cfg.verbs_per_person[1] + 1))
            for vi in rng.permutation(len(pool)):
                if k == 0:
                    break
                verb = pool[vi]
                rule = verb.target_rule
                legal = [m for m in cands if rule.target_kind.accepts(m.is_person)]
                if legal and rng.random() >= cfg.p_empty_target:
                    targets = legal
                else:
                    targets = [None]
                instrument = None
                if rule.instrument_allowed:
                    leftovers = {frozenset(m.id for m in cands
                                           if not m.is_person and (t is None or m.id != t.id))
                                 for t in targets}
                    if len(leftovers) != 1:
                        continue
                    (left,) = leftovers
                    if len(left) > 1:
                        continue
                    instrument = next(iter(left), None)
                for t in targets:
                    interactions.append(InteractionAnnotation(
                        s.id, verb.name, None if t is None else t.id, instrument))
                k -= 1

    scene = Scene(image_id, cfg.image_size[0], cfg.image_size[1], instances, interactions,
                  file_name=f"synth_{image_id:06d}.jpg")
    bad = validate_scene(scene, tax)
    if bad:  # pragma: no cover - construction guarantees validity
        raise AssertionError(f"generator produced invalid scene: {bad}")
    return scene


def codeword(k, dim, spacing):
    """k-th embedding codeword: balanced-ternary digits of k+1, scaled.

    Distinct codewords differ by at least ``spacing``.
    """
    n = k + 1
    out = np.zeros(dim)
    for j in range(dim):
        if n == 0:
            break
        r = n % 3
        if r == 2:
            r = -1
        out[j] = r
        n = (n - r) // 3
    if n:
        raise ValueError(f"codeword {k} does not fit in {dim} dimensions")
    return out * spacing


def render_perfect_bundle(scene, grid: AnchorGrid, tax=None, embed_dim=16, spacing=24.0):
    """Dense maps and detections of a flawless model for ``scene``."""
    tax = tax or builtin_taxonomy()
    asg = assign_anchors(grid, scene, tax)
    if asg.uncovered:
        raise AnchorCollisionError(f"instances without a dominating anchor: {asg.uncovered}")

    v = len(tax)
    verb = asg.verb_labels.astype(np.float32)
    presence = asg.presence_labels.astype(np.float32)
    embedding = np.zeros((len(grid), embed_dim), dtype=np.float32)

    grouped = {i for comp in asg.group_instances for i in comp}
    comps = list(asg.group_instances)
    comps += [(inst.id,) for inst in scene.instances if inst.id not in grouped]
    comps.sort(key=min)
    for k, comp in enumerate(comps):
        cw = codeword(k, embed_dim, spacing)
        for iid in comp:
            embedding[asg.instance_anchors[iid]] = cw

    dets = []
    for inst in sorted(scene.instances, key=lambda i: i.id):
        anchors = asg.instance_anchors[inst.id]
        ov = _iou_rows(grid.boxes[anchors], inst.bbox)
        best = int(anchors[int(np.argmax(ov))])
        if asg.owner[best] != inst.id:  # pragma: no cover
            raise AnchorCollisionError(f"instance {inst.id} lost its anchor")
        dets.append(Detection(inst.bbox, inst.class_name, 1.0, grid.anchor_ref(best)))
    return DenseMapBundle.from_flat(grid, verb, presence, embedding, v), dets


def _iou_rows(boxes, bbox):
    return iou_matrix(boxes, np.array([bbox.to_list()]))[:, 0]


def perturb(bundle: DenseMapBundle, noise: NoiseModel, seed=0) -> DenseMapBundle:
    """Clipped Gaussian jitter on probability planes, plain jitter on embeddings.

    One standard-normal draw per value for a given seed, scaled by the sigma,
    so different sigmas with the same seed perturb in the same direction.
    """
    if noise.sigma_p == 0 and noise.sigma_e == 0:
        levels = [type(lv)(lv.verb.copy(), lv.presence.copy(), lv.embedding.copy())
                  for lv in bundle.levels]
        return DenseMapBundle(bundle.grid, levels, bundle.n_verbs)
    rng = np.random.default_rng(seed)
    levels = []
    for lv in bundle.levels:
        zv = rng.standard_normal(lv.verb.shape, dtype=np.float32)
        zp = rng.standard_normal(lv.presence.shape, dtype=np.float32)
        ze = rng.standard_normal(lv.embedding.shape, dtype=np.float32)
        levels.append(type(lv)(
            np.clip(lv.verb + noise.sigma_p * zv, 0.0, 1.0, dtype=np.float32),
            np.clip(lv.presence + noise.sigma_p * zp, 0.0, 1.0, dtype=np.float32),
            (lv.embedding + noise.sigma_e * ze).astype(np.float32),
        ))
    return DenseMapBundle(bundle.grid, levels, bundle.n_verbs)


def jitter_detections(dets, noise: NoiseModel, seed=0):
    if noise.sigma_box == 0:
        return list(dets)
    rng = np.random.default_rng(seed)
    out = []
    for d in dets:
        b = d.bbox
        z = rng.standard_normal(4) * noise.sigma_box
        w = b.w * float(np.exp(z[2]))
        h = b.h * float(np.exp(z[3]))
        out.append(replace(d, bbox=BBox(b.x + z[0] * b.w, b.y + z[1] * b.h, w, h)))
    return out


def synth_example(cfg: SynthConfig, seed, tax=None):
    """``(scene, bundle, detections)`` for one seed, noise from ``cfg.noise`` applied."""
    tax = tax or builtin_taxonomy()
    scene = generate_scene(cfg, seed, tax=tax)
    grid = AnchorGrid(cfg.image_size, cfg.grid)
    bundle, dets = render_perfect_bundle(scene, grid, tax, cfg.embed_dim, cfg.codeword_spacing)
    bundle = perturb(bundle, cfg.noise, seed)
    dets = jitter_detections(dets, cfg.noise, seed)
    return scene, bundle, dets
