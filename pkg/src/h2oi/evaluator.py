"""AP_agent / AP_role evaluation under the Original and Objectness scenarios."""
from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .datamodel import COCO_CLASSES
from .geometry import iou
from .taxonomy import builtin_taxonomy


class Mode(enum.Enum):
    ORIGINAL = "original"
    OBJECTNESS = "objectness"


@dataclass(frozen=True)
class EvalScenario:
    mode: Mode = Mode.ORIGINAL
    role: int = 1
    iou_threshold: float = 0.5
    registry: tuple = COCO_CLASSES

    def __post_init__(self):
        if isinstance(self.mode, str):
            object.__setattr__(self, "mode", Mode(self.mode.lower()))
        if self.role not in (1, 2):
            raise ValueError("role must be 1 or 2")
        if not 0.0 < self.iou_threshold < 1.0:
            raise ValueError("iou_threshold must be in (0, 1)")

    def keeps_target(self, class_name):
        """Whether a target of this class stays boxed (else it becomes empty)."""
        if self.mode is Mode.OBJECTNESS or class_name is None:
            return True
        return class_name in self.registry


@dataclass
class VerbResult:
    verb: str
    id: int
    n_gt_agent: int = 0
    n_gt_role: int = 0
    n_pred: int = 0
    ap_agent: float | None = None
    ap_role: float | None = None


@dataclass
class EvalReport:
    scenario: EvalScenario
    per_verb: list = field(default_factory=list)
    mean_ap_agent: float = 0.0
    mean_ap_role: float = 0.0
    n_gt: int = 0
    n_pred: int = 0
    n_pred_with_instrument: int = 0

    def to_dict(self):
        return {
            "scenario": {"mode": self.scenario.mode.value, "role": self.scenario.role,
                         "iou_threshold": self.scenario.iou_threshold},
            "mean_ap_agent": self.mean_ap_agent,
            "mean_ap_role": self.mean_ap_role,
            "n_gt": self.n_gt,
            "n_pred": self.n_pred,
            "n_pred_with_instrument": self.n_pred_with_instrument,
            "per_verb": [vars(r) for r in self.per_verb],
        }

    def table(self):
        lines = [f"{'id':>3}  {'verb':<30} {'gt':>6} {'pred':>6} {'AP_agent':>9} {'AP_role':>9}"]
        for r in self.per_verb:
            if r.n_gt_role == 0 and r.n_pred == 0:
                continue
            fa = "-" if r.ap_agent is None else f"{100 * r.ap_agent:9.2f}"
            fr = "-" if r.ap_role is None else f"{100 * r.ap_role:9.2f}"
            lines.append(f"{r.id:>3}  {r.verb:<30} {r.n_gt_role:>6} {r.n_pred:>6} {fa:>9} {fr:>9}")
        lines.append(f"mean AP_agent {100 * self.mean_ap_agent:.2f}  "
                     f"mean AP_role {100 * self.mean_ap_role:.2f}  "
                     f"({self.scenario.mode.value}, role{self.scenario.role})")
        return "\n".join(lines)


def average_precision(ranked, n_gt) -> float:
    """All-point interpolated AP of ``(is_tp, score)`` pairs.

    Pairs are ranked by descending score; equal scores keep their given
    order.  Returns 0.0 when ``n_gt`` is 0.
    """
    if n_gt <= 0 or not ranked:
        return 0.0
    order = sorted(range(len(ranked)), key=lambda i: -ranked[i][1])
    tp = np.array([1.0 if ranked[i][0] else 0.0 for i in order])
    ctp = np.cumsum(tp)
    recall = ctp / n_gt
    precision = ctp / np.arange(1, len(tp) + 1)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    idx = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


def _match(preds, gt_by_image, thr, role):
    """Greedy matching in score order; returns the ranked ``(is_tp, score)`` list.

    ``preds``: ``(image_id, subject_box, target_box|None, score)``;
    ``gt_by_image``: image -> list of ``(subject_box, target_box|None)``.
    ``role`` None means agent matching (targets ignored).
    """
    used = {img: [False] * len(items) for img, items in gt_by_image.items()}
    order = sorted(range(len(preds)), key=lambda i: -preds[i][3])
    ranked = []
    for i in order:
        img, sbox, tbox, score = preds[i]
        best, best_key = None, None
        for j, (gs, gt) in enumerate(gt_by_image.get(img, ())):
            if used[img][j]:
                continue
            si = iou(sbox, gs)
            if si < thr:
                continue
            strict = True
            ti = 1.0
            if role is not None:
                if gt is None:
                    if tbox is not None:
                        if role == 1:
                            continue
                        strict = False
                elif tbox is None:
                    continue
                else:
                    ti = iou(tbox, gt)
                    if ti < thr:
                        continue
            # a strict (role1-valid) match beats a relaxed one, then overlap
            key = (strict, min(si, ti))
            if best_key is None or key > best_key:
                best, best_key = j, key
        if best is not None:
            used[img][best] = True
        ranked.append((best is not None, score))
    return ranked


def evaluate(gt, preds, scenario: EvalScenario = EvalScenario(), tax=None, jobs=1) -> EvalReport:
    tax = tax or builtin_taxonomy()
    thr = scenario.iou_threshold
    images = {sc.image_id for sc in gt}

    agent_gt = {v.name: {} for v in tax}
    role_gt = {v.name: {} for v in tax}
    for sc in gt:
        insts = {inst.id: inst for inst in sc.instances}
        seen_agent = set()
        for ia in sc.interactions:
            subj = insts[ia.subject_id]
            if (ia.subject_id, ia.verb) not in seen_agent:
                seen_agent.add((ia.subject_id, ia.verb))
                agent_gt[ia.verb].setdefault(sc.image_id, []).append((subj.bbox, None))
            tbox = None
            if ia.target_id is not None:
                tgt = insts[ia.target_id]
                if scenario.keeps_target(tgt.class_name):
                    tbox = tgt.bbox
            role_gt[ia.verb].setdefault(sc.image_id, []).append((subj.bbox, tbox))

    agent_pred = {v.name: {} for v in tax}
    role_pred = {v.name: [] for v in tax}
    n_instr = 0
    for k, p in enumerate(preds):
        if p.verb not in tax:
            raise ValueError(f"prediction {k}: unknown verb {p.verb!r}")
        if p.image_id not in images:
            raise ValueError(f"prediction {k}: image {p.image_id} not in ground truth")
        tbox = p.target_box if scenario.keeps_target(p.target_class) else None
        role_pred[p.verb].append((p.image_id, p.subject_box, tbox, p.score))
        key = (p.image_id, p.subject_box)
        agent_pred[p.verb][key] = max(agent_pred[p.verb].get(key, -1.0), p.score)
        n_instr += p.instrument_box is not None

    def one(verb):
        res = VerbResult(verb.name, verb.id)
        ag = agent_gt[verb.name]
        rg = role_gt[verb.name]
        res.n_gt_agent = sum(len(x) for x in ag.values())
        res.n_gt_role = sum(len(x) for x in rg.values())
        res.n_pred = len(role_pred[verb.name])
        if res.n_gt_agent:
            ap = [(img, sbox, None, s) for (img, sbox), s in agent_pred[verb.name].items()]
            res.ap_agent = average_precision(_match(ap, ag, thr, None), res.n_gt_agent)
        if res.n_gt_role:
            ranked = _match(role_pred[verb.name], rg, thr, scenario.role)
            res.ap_role = average_precision(ranked, res.n_gt_role)
        return res

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            per_verb = list(ex.map(one, tax.verbs))
    else:
        per_verb = [one(v) for v in tax.verbs]

    agents = [r.ap_agent for r in per_verb if r.ap_agent is not None]
    roles = [r.ap_role for r in per_verb if r.ap_role is not None]
    return EvalReport(
        scenario=scenario,
        per_verb=per_verb,
        mean_ap_agent=float(np.mean(agents)) if agents else 0.0,
        mean_ap_role=float(np.mean(roles)) if roles else 0.0,
        n_gt=sum(r.n_gt_role for r in per_verb),
        n_pred=len(preds),
        n_pred_with_instrument=n_instr,
    )
