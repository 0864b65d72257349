"""Subject-centric single-pass decoding of dense maps into triplets.

Also home of the two exchange formats a model produces for this toolkit:
the ``H2ODM1`` dense-map bundle file and the detections document.
"""
from __future__ import annotations

import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .datamodel import BBox, DatasetError, PredictedTriplet
from .dense import AnchorGrid, AnchorGridConfig, DenseMapBundle, LevelMaps
from .geometry import NMS_THRESHOLD, SCORE_FLOOR, TOP_K, Detection, postprocess
from .taxonomy import Category, builtin_taxonomy

BUNDLE_MAGIC = b"H2ODM1"
_CHANNEL_NOTE = ("verb: active voice 0..V-1, passive voice V..2V-1; presence: 0..V-1; "
                 "embedding: 0..T-1; per level verb, presence, embedding planes, "
                 "row-major (y, x, anchor, channel), float32 little-endian")


@dataclass(frozen=True)
class DecodeConfig:
    score_floor: float = 0.05
    top_k_per_category: int = 100
    bandwidth: float = 1.0
    nms_threshold: float = NMS_THRESHOLD
    detection_floor: float = SCORE_FLOOR
    detection_top_k: int = TOP_K

    def __post_init__(self):
        for name in ("score_floor", "detection_floor"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")


class _VerbTables:
    """Per-taxonomy index arrays used by decode, built once."""

    _cache = {}

    def __init__(self, tax):
        v = len(tax)
        self.names = [vb.name for vb in tax]
        self.category = [vb.category for vb in tax]
        self.kind = [vb.target_rule.target_kind for vb in tax]
        self.instrument = np.array([vb.target_rule.instrument_allowed for vb in tax])
        self.non_exclusive = np.array([vb.id for vb in tax if not vb.exclusive], dtype=np.int64)
        self.exclusive_groups = [np.array([vb.id for vb in tax.in_category(c)], dtype=np.int64)
                                 for c in (Category.POSTURE, Category.MOTION)]
        # accept_person[k] / accept_object[k]: which target kinds verb k admits
        self.accept_person = np.array([self.kind[k].accepts(True) for k in range(v)])
        self.accept_object = np.array([self.kind[k].accepts(False) for k in range(v)])

    @classmethod
    def of(cls, tax):
        key = id(tax)
        if key not in cls._cache:
            cls._cache[key] = cls(tax)
        return cls._cache[key]


def _read_anchor_values(bundle, dets):
    grid = bundle.grid
    v2 = 2 * bundle.n_verbs
    d = len(dets)
    act = np.empty((d, bundle.n_verbs))
    pres = np.empty((d, bundle.n_verbs))
    emb = np.empty((d, bundle.embed_dim))
    for i, det in enumerate(dets):
        if det.anchor_ref is None:
            raise ValueError(f"detection {i} has no anchor_ref")
        grid.flat_index(det.anchor_ref)  # bounds check
        level, y, x, a = (int(c) for c in det.anchor_ref)
        lv = bundle.levels[level]
        act[i] = lv.verb[y, x, a, :v2 // 2]
        pres[i] = lv.presence[y, x, a]
        emb[i] = lv.embedding[y, x, a]
    return act, pres, emb


def decode(bundle: DenseMapBundle, detections, tax=None, cfg: DecodeConfig = DecodeConfig(),
           image_id=0):
    """Turn one image's bundle + detections into ranked ``PredictedTriplet``s.

    Scores: ``act * presence * affinity`` for a target, ``act * (1 - presence)``
    for the empty target, with ``affinity = 1 / (1 + |e_s - e_t| / bandwidth)``.
    Posture and motion emit only their argmax verb with its best target or
    the empty target.
    """
    tax = tax or builtin_taxonomy()
    if len(bundle.levels) != bundle.grid.n_levels or bundle.n_verbs != len(tax):
        raise ValueError("bundle does not match grid or taxonomy")
    tables = _VerbTables.of(tax)
    dets = postprocess(list(detections), cfg.nms_threshold, cfg.detection_floor,
                       cfg.detection_top_k)
    if not dets:
        return []
    floor = cfg.score_floor
    act, pres, emb = _read_anchor_values(bundle, dets)
    d = len(dets)
    is_person = np.array([det.is_person for det in dets])
    aff = kernels.affinity(emb, cfg.bandwidth)
    legal = np.where(is_person[None, :], tables.accept_person[:, None],
                     tables.accept_object[:, None])
    scores, null = kernels.triplet_scores(act, pres, aff, legal, is_person)

    rows = []  # (score, s, verb, t) with t = -1 for the empty target
    ne = tables.non_exclusive
    s_i, v_i, t_i = np.nonzero(scores[:, ne, :] >= floor)
    rows.extend(zip(scores[s_i, ne[v_i], t_i], s_i, ne[v_i], t_i))
    s_i, v_i = np.nonzero(null[:, ne] >= floor)
    rows.extend(zip(null[s_i, ne[v_i]], s_i, ne[v_i], np.full(len(s_i), -1)))

    subjects = np.nonzero(is_person)[0]
    for ids in tables.exclusive_groups:
        vstar = ids[np.argmax(act[subjects][:, ids], axis=1)]
        st_all = scores[subjects, vstar, :]
        tstar = np.argmax(st_all, axis=1)
        st = st_all[np.arange(len(subjects)), tstar]
        sn = null[subjects, vstar]
        use_t = st > sn
        best = np.where(use_t, st, sn)
        for k in np.nonzero(best >= floor)[0]:
            rows.append((best[k], subjects[k], vstar[k], tstar[k] if use_t[k] else -1))

    # top-K per category, then one global ranking
    by_cat = {}
    for r in rows:
        by_cat.setdefault(tables.category[r[2]], []).append(r)
    kept = []
    for cat_rows in by_cat.values():
        cat_rows.sort(key=_rank_key)
        kept.extend(cat_rows[:cfg.top_k_per_category])
    kept.sort(key=_rank_key)

    # instrument: best object by affinity to the subject, excluding the target
    inst_aff = np.where(~is_person[None, :], aff, -1.0)
    inst_aff[np.arange(d), np.arange(d)] = -1.0
    order = np.argsort(-inst_aff, axis=1, kind="stable")[:, :2]

    out = []
    for score, s, v, t in kept:
        instrument_box = None
        if tables.instrument[v]:
            for i in order[s]:
                if i != t and inst_aff[s, i] >= 0:
                    if act[s, v] * inst_aff[s, i] >= floor:
                        instrument_box = dets[i].bbox
                    break
        out.append(PredictedTriplet(
            image_id=image_id,
            subject_box=dets[s].bbox,
            verb=tables.names[v],
            score=float(min(max(score, 0.0), 1.0)),
            target_box=None if t < 0 else dets[t].bbox,
            target_class=None if t < 0 else dets[t].class_name,
            instrument_box=instrument_box,
        ))
    return out


def _rank_key(r):
    score, s, v, t = r
    return (-float(score), int(s), int(v), int(t) if t >= 0 else 1 << 30)


# ---------------------------------------------------------------------------
# Bundle file
# ---------------------------------------------------------------------------


def bundle_metadata(bundle: DenseMapBundle):
    grid = bundle.grid
    return {
        "V": bundle.n_verbs,
        "T": bundle.embed_dim,
        "A": grid.A,
        "levels": [{"stride": s, "W": w, "H": h}
                   for s, (h, w) in zip(grid.config.strides, grid.level_shapes)],
        "image_size": list(grid.image_size),
        "anchors": grid.config.to_dict(),
        "channel_order": _CHANNEL_NOTE,
    }


def write_bundle(bundle: DenseMapBundle, path):
    meta = json.dumps(bundle_metadata(bundle), sort_keys=True)
    with open(path, "wb") as fh:
        fh.write(BUNDLE_MAGIC + b"\n")
        fh.write(meta.encode("utf-8") + b"\n")
        for lv in bundle.levels:
            for plane in (lv.verb, lv.presence, lv.embedding):
                fh.write(np.ascontiguousarray(plane, dtype="<f4").tobytes())


def read_bundle(path) -> DenseMapBundle:
    data = Path(path).read_bytes()
    buf = io.BytesIO(data)
    if buf.readline().rstrip(b"\r\n") != BUNDLE_MAGIC:
        raise DatasetError(f"{path}: not an H2ODM1 bundle")
    try:
        meta = json.loads(buf.readline().decode("utf-8"))
        cfg = AnchorGridConfig.from_dict(meta["anchors"])
        grid = AnchorGrid(tuple(meta["image_size"]), cfg)
        v, t, a = int(meta["V"]), int(meta["T"]), int(meta["A"])
    except (KeyError, TypeError, ValueError) as e:
        raise DatasetError(f"{path}: bad metadata: {e!r}") from None
    declared = [(lv["H"], lv["W"]) for lv in meta["levels"]]
    if declared != grid.level_shapes or a != grid.A:
        raise DatasetError(f"{path}: level shapes disagree with anchor configuration")
    pos = buf.tell()
    levels = []
    for h, w in grid.level_shapes:
        planes = []
        for c in (2 * v, v, t):
            n = h * w * a * c
            if pos + 4 * n > len(data):
                raise DatasetError(f"{path}: truncated plane data")
            planes.append(np.frombuffer(data, dtype="<f4", count=n, offset=pos)
                          .reshape(h, w, a, c).astype(np.float32))
            pos += 4 * n
        levels.append(LevelMaps(*planes))
    if pos != len(data):
        raise DatasetError(f"{path}: {len(data) - pos} trailing bytes")
    bundle = DenseMapBundle(grid, levels, v)
    try:
        bundle.check()
    except ValueError as e:
        raise DatasetError(f"{path}: {e}") from None
    return bundle


# ---------------------------------------------------------------------------
# Detections document
# ---------------------------------------------------------------------------


def detection_to_dict(det: Detection, image_id):
    return {"image_id": image_id, "bbox": det.bbox.to_list(), "class": det.class_name,
            "score": det.score,
            "anchor_ref": None if det.anchor_ref is None else list(det.anchor_ref)}


def write_detections(by_image, path):
    recs = [detection_to_dict(d, iid) for iid in sorted(by_image) for d in by_image[iid]]
    Path(path).write_text(json.dumps(recs, indent=1) + "\n", encoding="utf-8")


def read_detections(path):
    """Detections document -> ``{image_id: [Detection, ...]}``."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DatasetError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from None
    if not isinstance(doc, list):
        raise DatasetError(f"{path}: detections document must be a list")
    out = {}
    for k, rec in enumerate(doc):
        try:
            ref = rec.get("anchor_ref")
            det = Detection(BBox.from_list(rec["bbox"]), str(rec["class"]), float(rec["score"]),
                            None if ref is None else tuple(int(c) for c in ref))
            out.setdefault(int(rec.get("image_id", 0)), []).append(det)
        except (KeyError, TypeError, ValueError, AttributeError) as e:
            raise DatasetError(f"detections[{k}]: {e!r}") from None
    return out
