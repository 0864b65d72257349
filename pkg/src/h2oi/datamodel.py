"""Ground-truth and prediction records, their JSON documents, and statistics."""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .taxonomy import Category, builtin_taxonomy

COCO_CLASSES = (
    "person", "bicycle", "car", "motorcycle", "airplane", "bus", "train", "truck",
    "boat", "traffic light", "fire hydrant", "stop sign", "parking meter", "bench",
    "bird", "cat", "dog", "horse", "sheep", "cow", "elephant", "bear", "zebra",
    "giraffe", "backpack", "umbrella", "handbag", "tie", "suitcase", "frisbee",
    "skis", "snowboard", "sports ball", "kite", "baseball bat", "baseball glove",
    "skateboard", "surfboard", "tennis racket", "bottle", "wine glass", "cup",
    "fork", "knife", "spoon", "bowl", "banana", "apple", "sandwich", "orange",
    "broccoli", "carrot", "hot dog", "pizza", "donut", "cake", "chair", "couch",
    "potted plant", "bed", "dining table", "toilet", "tv", "laptop", "mouse",
    "remote", "keyboard", "cell phone", "microwave", "oven", "toaster", "sink",
    "refrigerator", "book", "clock", "vase", "scissors", "teddy bear",
    "hair drier", "toothbrush",
)
OTHER_CLASS = "other"


class DatasetError(ValueError):
    """Malformed annotation or prediction document."""


@dataclass(frozen=True)
class BBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.x, self.y, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box {vals}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box must have positive size, got {vals}")

    @classmethod
    def from_list(cls, xs):
        if len(xs) != 4:
            raise ValueError(f"bbox needs 4 numbers, got {len(xs)}")
        return cls(*(float(v) for v in xs))

    def to_list(self):
        return [self.x, self.y, self.w, self.h]

    def clamp(self, width, height):
        x1, y1 = min(max(self.x, 0.0), width), min(max(self.y, 0.0), height)
        x2 = min(max(self.x + self.w, 0.0), width)
        y2 = min(max(self.y + self.h, 0.0), height)
        if (x1, y1, x2, y2) == (self.x, self.y, self.x + self.w, self.y + self.h):
            return self
        return BBox(x1, y1, x2 - x1, y2 - y1)


@dataclass(frozen=True)
class Instance:
    id: int
    image_id: int
    bbox: BBox
    class_name: str

    @property
    def is_person(self) -> bool:
        return self.class_name == "person"


@dataclass(frozen=True)
class InteractionAnnotation:
    subject_id: int
    verb: str
    target_id: Optional[int] = None
    instrument_id: Optional[int] = None


@dataclass
class Scene:
    image_id: int
    width: int
    height: int
    instances: list = field(default_factory=list)
    interactions: list = field(default_factory=list)
    file_name: str = ""

    def instance(self, iid):
        for inst in self.instances:
            if inst.id == iid:
                return inst
        raise KeyError(iid)

    def triplets(self):
        """Ground truth as ``(subject_id, verb, target_id)`` tuples."""
        return [(ia.subject_id, ia.verb, ia.target_id) for ia in self.interactions]


@dataclass(frozen=True)
class PredictedTriplet:
    image_id: int
    subject_box: BBox
    verb: str
    score: float
    target_box: Optional[BBox] = None
    target_class: Optional[str] = None
    instrument_box: Optional[BBox] = None

    def __post_init__(self):
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise ValueError(f"score must be in [0, 1], got {self.score}")

    def to_dict(self):
        return {
            "image_id": self.image_id,
            "subject_box": self.subject_box.to_list(),
            "verb": self.verb,
            "target_box": None if self.target_box is None else self.target_box.to_list(),
            "target_class": self.target_class,
            "instrument_box": None if self.instrument_box is None else self.instrument_box.to_list(),
            "score": self.score,
        }

    @classmethod
    def from_dict(cls, d):
        def box(v):
            return None if v is None else BBox.from_list(v)
        return cls(
            image_id=int(d["image_id"]),
            subject_box=BBox.from_list(d["subject_box"]),
            verb=str(d["verb"]),
            score=float(d["score"]),
            target_box=box(d.get("target_box")),
            target_class=d.get("target_class"),
            instrument_box=box(d.get("instrument_box")),
        )


# ---------------------------------------------------------------------------
# Documents
# ---------------------------------------------------------------------------


def scenes_to_document(scenes):
    images, instances, interactions = [], [], []
    for sc in scenes:
        images.append({"id": sc.image_id, "width": sc.width, "height": sc.height,
                       "file_name": sc.file_name})
        for inst in sc.instances:
            instances.append({"id": inst.id, "image_id": inst.image_id,
                              "bbox": inst.bbox.to_list(), "class": inst.class_name})
        for ia in sc.interactions:
            rec = {"subject": ia.subject_id, "verb": ia.verb}
            if ia.target_id is not None:
                rec["target"] = ia.target_id
            if ia.instrument_id is not None:
                rec["instrument"] = ia.instrument_id
            interactions.append(rec)
    return {"images": images, "instances": instances, "interactions": interactions}


def scenes_from_document(doc, registry=COCO_CLASSES, tax=None):
    """Build scenes from a parsed document; raises DatasetError with position info."""
    tax = tax or builtin_taxonomy()
    known = set(registry) | {OTHER_CLASS}
    if not isinstance(doc, dict):
        raise DatasetError("top level must be an object")
    for key in ("images", "instances", "interactions"):
        if not isinstance(doc.get(key, []), list):
            raise DatasetError(f"{key!r} must be a list")

    scenes = {}
    for k, im in enumerate(doc.get("images", [])):
        try:
            sc = Scene(int(im["id"]), int(im["width"]), int(im["height"]),
                       file_name=str(im.get("file_name", "")))
        except (KeyError, TypeError, ValueError) as e:
            raise DatasetError(f"images[{k}]: {e!r}") from None
        if sc.image_id in scenes:
            raise DatasetError(f"images[{k}]: duplicate image id {sc.image_id}")
        scenes[sc.image_id] = sc

    owner = {}
    for k, rec in enumerate(doc.get("instances", [])):
        where = f"instances[{k}]"
        try:
            iid, image_id, cls = int(rec["id"]), int(rec["image_id"]), str(rec["class"])
            box = BBox.from_list(rec["bbox"])
        except (KeyError, TypeError, ValueError) as e:
            raise DatasetError(f"{where}: {e}") from None
        if image_id not in scenes:
            raise DatasetError(f"{where}: dangling image id {image_id}")
        if iid in owner:
            raise DatasetError(f"{where}: duplicate instance id {iid}")
        if cls not in known:
            raise DatasetError(f"{where}: unknown class {cls!r}")
        sc = scenes[image_id]
        try:
            box = box.clamp(sc.width, sc.height)
        except ValueError:
            raise DatasetError(f"{where}: box lies outside image {image_id}") from None
        sc.instances.append(Instance(iid, image_id, box, cls))
        owner[iid] = sc

    for k, rec in enumerate(doc.get("interactions", [])):
        where = f"interactions[{k}]"
        try:
            sid, verb = int(rec["subject"]), str(rec["verb"])
            tid = None if rec.get("target") is None else int(rec["target"])
            nid = None if rec.get("instrument") is None else int(rec["instrument"])
        except (KeyError, TypeError, ValueError) as e:
            raise DatasetError(f"{where}: {e!r}") from None
        if verb not in tax:
            raise DatasetError(f"{where}: unknown verb {verb!r}")
        for role, ref in (("subject", sid), ("target", tid), ("instrument", nid)):
            if ref is not None and ref not in owner:
                raise DatasetError(f"{where}: dangling {role} id {ref}")
        sc = owner[sid]
        for role, ref in (("target", tid), ("instrument", nid)):
            if ref is not None and owner[ref] is not sc:
                raise DatasetError(f"{where}: {role} {ref} is in another image")
        sc.interactions.append(InteractionAnnotation(sid, verb, tid, nid))
    return list(scenes.values())


def read_dataset(path, registry=COCO_CLASSES):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DatasetError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from None
    return scenes_from_document(doc, registry)


def write_dataset(scenes, path):
    Path(path).write_text(json.dumps(scenes_to_document(scenes), indent=1) + "\n",
                          encoding="utf-8")


def read_predictions(path, tax=None):
    tax = tax or builtin_taxonomy()
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DatasetError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from None
    if not isinstance(doc, list):
        raise DatasetError(f"{path}: prediction document must be a list")
    out = []
    for k, rec in enumerate(doc):
        try:
            p = PredictedTriplet.from_dict(rec)
        except (KeyError, TypeError, ValueError) as e:
            raise DatasetError(f"predictions[{k}]: {e!r}") from None
        if p.verb not in tax:
            raise DatasetError(f"predictions[{k}]: unknown verb {p.verb!r}")
        out.append(p)
    return out


def write_predictions(preds, path):
    Path(path).write_text(json.dumps([p.to_dict() for p in preds], indent=1) + "\n",
                          encoding="utf-8")


def map_to_registry(scenes, registry=COCO_CLASSES):
    """Relabel instances whose class is outside ``registry`` as ``"other"``."""
    known = set(registry)
    out = []
    for sc in scenes:
        insts = [inst if inst.class_name in known else
                 Instance(inst.id, inst.image_id, inst.bbox, OTHER_CLASS)
                 for inst in sc.instances]
        out.append(Scene(sc.image_id, sc.width, sc.height, insts,
                         list(sc.interactions), sc.file_name))
    return out


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------


@dataclass
class DatasetStats:
    n_images: int = 0
    n_persons: int = 0
    n_objects: int = 0
    interactions_per_category: dict = field(
        default_factory=lambda: {c.value: 0 for c in Category})

    @property
    def n_interactions(self):
        return sum(self.interactions_per_category.values())

    @property
    def persons_per_image(self):
        return self.n_persons / self.n_images if self.n_images else 0.0

    @property
    def objects_per_image(self):
        return self.n_objects / self.n_images if self.n_images else 0.0

    def __add__(self, other):
        cats = Counter(self.interactions_per_category)
        cats.update(other.interactions_per_category)
        return DatasetStats(self.n_images + other.n_images, self.n_persons + other.n_persons,
                            self.n_objects + other.n_objects,
                            {c.value: cats[c.value] for c in Category})

    def to_dict(self):
        return {
            "n_images": self.n_images,
            "n_persons": self.n_persons,
            "n_objects": self.n_objects,
            "n_interactions": self.n_interactions,
            "interactions_per_category": dict(self.interactions_per_category),
            "persons_per_image": self.persons_per_image,
            "objects_per_image": self.objects_per_image,
        }


def compute_stats(scenes, tax=None) -> DatasetStats:
    tax = tax or builtin_taxonomy()
    st = DatasetStats()
    for sc in scenes:
        st.n_images += 1
        for inst in sc.instances:
            if inst.is_person:
                st.n_persons += 1
            else:
                st.n_objects += 1
        for ia in sc.interactions:
            st.interactions_per_category[tax.category(ia.verb).value] += 1
    return st
