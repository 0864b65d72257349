"""Acceptance criteria; each test appends one PASS/FAIL line to the run summary."""
import math
import random
import time

import numpy as np

from h2oi.bench import bench_decode
from h2oi.datamodel import BBox
from h2oi.dense import FocalParams, focal_loss, grad_check, presence_loss, pull_push_loss
from h2oi.evaluator import EvalScenario, Mode, average_precision, evaluate
from h2oi.geometry import iou, nms, nms_reference
from h2oi.synthgen import SynthConfig, synth_example
from h2oi.taxonomy import Category, builtin_taxonomy, validate_scene
from h2oi.decoder import decode

import test_dense as td
import test_evaluator as te
import test_geometry as tg
import validator_cases as vc
from conftest import ACCEPTANCE_LINES
from oracles import gt_multiset, pred_multiset, synth_run

SCENARIOS = [EvalScenario(m, r) for m in Mode for r in (1, 2)]


def record(name, ok, detail):
    line = f"[ACCEPT] {name}: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_taxonomy_integrity():
    t0 = time.perf_counter()
    builtin_taxonomy.cache_clear()
    tax = builtin_taxonomy()
    split = [len(tax.in_category(c)) for c in Category]
    golden = tax.lookup("stand").id == 0 and tax.by_id(50).category is Category.VIOLENT
    dt = time.perf_counter() - t0
    ok = len(tax) == 51 and split == [7, 11, 12, 13, 8] and golden and dt < 1.0
    record("taxonomy integrity", ok, f"{len(tax)} verbs, split {split}, {dt * 1e3:.1f} ms")


def test_validator_fixture_suite():
    wrong = [n for n, (_, want) in vc.CASES.items()
             if [(v.rule, v.subject_id) for v in validate_scene(vc.case_scene(n))] != want]
    good = validate_scene(vc.good_scene())
    rules = sorted({want[0][0] for _, want in vc.CASES.values()})
    ok = len(vc.CASES) == 20 and not wrong and good == [] and rules == [f"R{i}" for i in range(1, 7)]
    record("validator", ok, f"{len(vc.CASES) - len(wrong)}/{len(vc.CASES)} cases exact, "
                            f"clean fixture {len(good)} violations")


def test_loss_correctness():
    worst = {}
    for name, build in (("focal", td._random_focal), ("presence", td._random_presence),
                        ("pull_push", td._random_pull_push)):
        errs = []
        for seed in range(50):
            x, kernel = build(1000 + seed)
            errs.append(grad_check(kernel, x, 1e-5, n_coords=200, seed=seed))
        worst[name] = max(errs)
    ce_gap = 0.0
    rng = np.random.default_rng(7)
    for _ in range(50):
        p = rng.uniform(0.001, 0.999, (30, 8))
        y = (rng.uniform(size=p.shape) < 0.3).astype(np.uint8)
        rows = np.sort(rng.choice(30, 12, replace=False))
        loss, _ = focal_loss(p, td._asg(y, rows), FocalParams(alpha=1.0, gamma=0.0))
        ce = -np.sum(np.where(y[rows] == 1, np.log(p[rows]), np.log(1 - p[rows])))
        ce_gap = max(ce_gap, abs(loss - ce))
    ok = max(worst.values()) < 1e-4 and ce_gap <= 1e-9
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    record("loss correctness", ok, f"max rel grad err {detail}; CE gap {ce_gap:.1e}")


def test_geometry():
    rng = np.random.default_rng(2024)
    mismatches = 0
    for _ in range(1000):
        dets = tg._random_dets(rng, int(rng.integers(0, 51)))
        mismatches += nms(dets, 0.5) != nms_reference(dets, 0.5)
    b = BBox(2, 3, 7, 11)
    errs = [abs(iou(b, b) - 1.0), abs(iou(BBox(0, 0, 10, 10), BBox(50, 50, 10, 10)) - 0.0),
            abs(iou(BBox(0, 0, 10, 10), BBox(5, 5, 10, 10)) - 25 / 175)]
    ok = mismatches == 0 and max(errs) <= 1e-12
    record("geometry", ok, f"NMS mismatches {mismatches}/1000, max IoU err {max(errs):.1e}")


def test_round_trip_oracle():
    t0 = time.perf_counter()
    cfg = SynthConfig()
    scenes, preds, bad = [], [], 0
    for seed in range(500):
        scene, bundle, dets = synth_example(cfg, seed)
        out = decode(bundle, dets, image_id=scene.image_id)
        bad += pred_multiset(out) != gt_multiset(scene)
        scenes.append(scene)
        preds.extend(out)
    aps = [(evaluate(scenes, preds, s).mean_ap_agent, evaluate(scenes, preds, s).mean_ap_role)
           for s in SCENARIOS]
    dt = time.perf_counter() - t0
    ok = bad == 0 and all(a == 1.0 and r == 1.0 for a, r in aps) and dt < 120
    n_gt = sum(len(s.interactions) for s in scenes)
    record("round-trip oracle", ok, f"{500 - bad}/500 scenes exact, {n_gt} triplets, "
                                    f"min AP {min(min(x) for x in aps):.4f}, {dt:.1f} s")


def test_evaluator_hand_cases():
    hand = [
        average_precision([(True, 0.9), (False, 0.8)], 2),
        average_precision([(False, 0.9), (True, 0.8)], 1),
        te.ap(evaluate([te._two_holders()], [te.pred("hold", te.P1, 0.9, te.CUP1, "cup"),
                                             te.pred("hold", te.P2, 0.8, te.VASE, "cup")]),
              "hold"),
        te.ap(evaluate([te.make_scene([(1, "person", te.P1), (3, "cup", te.CUP1),
                                       (4, "cup", te.CUP2)],
                                      [(1, "stand"), (1, "still"), (1, "hold", 3),
                                       (1, "hold", 4)])],
                       [te.pred("hold", te.P1, 0.9, te.CUP1, "cup")]), "hold"),
    ]
    hand_err = max(abs(h - 0.5) for h in hand)

    role_bad = dup_bad = 0
    rnd = random.Random(0)
    for run in range(100):
        sigma = 0.05 + 0.3 * rnd.random()
        scenes, preds = synth_run(range(run * 3, run * 3 + 3), sigma, 0.5)
        for mode in Mode:
            r1 = evaluate(scenes, preds, EvalScenario(mode, 1))
            r2 = evaluate(scenes, preds, EvalScenario(mode, 2))
            role_bad += any(b.ap_role < a.ap_role - 1e-12 for a, b in zip(r1.per_verb, r2.per_verb)
                            if a.ap_role is not None)
        if run % 5 == 0:
            dup = preds + rnd.sample(preds, k=len(preds) // 3)
            for s in SCENARIOS:
                base, more = evaluate(scenes, preds, s), evaluate(scenes, dup, s)
                for a, b in zip(base.per_verb, more.per_verb):
                    for x, y in ((a.ap_agent, b.ap_agent), (a.ap_role, b.ap_role)):
                        dup_bad += x is not None and y > x + 1e-12
    ok = hand_err <= 1e-9 and role_bad == 0 and dup_bad == 0
    record("evaluator hand cases", ok, f"hand max err {hand_err:.1e}, role2<role1 in "
                                       f"{role_bad}/200, duplicate gains {dup_bad}")


def test_noise_monotonicity():
    sigmas = (0.0, 0.1, 0.2, 0.3)
    curve = []
    for sp in sigmas:
        per_seed = []
        for seed in range(20):
            scenes, preds = synth_run(range(seed * 10, seed * 10 + 10), sp, 0.0)
            per_seed.append(evaluate(scenes, preds).mean_ap_role)
        curve.append(float(np.mean(per_seed)))
    rises = [b - a for a, b in zip(curve, curve[1:]) if b > a]
    ok = (not rises or (len(rises) == 1 and rises[0] <= 0.005)) and curve[-1] < curve[0]
    record("noise monotonicity", ok, "mean AP_role " + ", ".join(
        f"s={s}: {c:.4f}" for s, c in zip(sigmas, curve)) + f"; inversions {len(rises)}")


def test_constant_time_decoding():
    rows, _ = bench_decode((1, 50), repetitions=40, top_k=100, seed=0)
    t = {r["interactions"]: r["median_ms"] for r in rows}
    ratio = max(t.values()) / min(t.values())
    dets = rows[0]["detections"]
    ok = ratio <= 1.25 and dets == 100
    record("constant-time decoding", ok, f"K={dets}, 1 interaction {t[1]:.2f} ms, "
                                         f"50 interactions {t[50]:.2f} ms, ratio {ratio:.3f}")
