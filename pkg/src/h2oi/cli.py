"""Command line entry point: ``h2oi <subcommand> ...``.

Exit codes: 0 success, 1 validation violations, 2 structural or file errors
(including bad usage).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import datamodel
from .datamodel import DatasetError
from .decoder import (DecodeConfig, decode, read_bundle, read_detections, write_bundle,
                      write_detections)
from .evaluator import EvalScenario, evaluate
from .synthgen import NoiseModel, SynthConfig, synth_example
from .taxonomy import StructuralError, builtin_taxonomy, validate_scene


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


class _UsageError(Exception):
    pass


def bundle_path(directory, image_id):
    return Path(directory) / f"{image_id:06d}.h2odm"


def _seed_range(text):
    if ":" in text:
        lo, hi = text.split(":", 1)
        return range(int(lo), int(hi))
    return range(int(text))


def _int_list(text):
    return [int(x) for x in text.split(",") if x.strip()]


def _dump(obj, path):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def cmd_validate(args):
    scenes = datamodel.read_dataset(args.dataset)
    tax = builtin_taxonomy()
    n = 0
    for sc in scenes:
        for v in validate_scene(sc, tax):
            print(f"image {sc.image_id}: {v.rule} subject {v.subject_id}: {v.message}")
            n += 1
    print(f"{n} violations")
    return 1 if n else 0


def cmd_stats(args):
    st = datamodel.compute_stats(datamodel.read_dataset(args.dataset))
    d = st.to_dict()
    if args.json:
        print(json.dumps(d, indent=1, sort_keys=True))
    else:
        for k, v in d.items():
            if isinstance(v, dict):
                for kk, vv in v.items():
                    print(f"  {kk:<20} {vv}")
            elif isinstance(v, float):
                print(f"{k:<22} {v:.3f}")
            else:
                print(f"{k:<22} {v}")
    return 0


def cmd_taxonomy(args):
    tax = builtin_taxonomy()
    if args.json:
        print(json.dumps([{"id": v.id, "name": v.name, "category": v.category.value,
                           "exclusive": v.category.exclusive,
                           "mandatory": v.category.mandatory,
                           "target_kind": v.target_rule.target_kind.value,
                           "instrument_allowed": v.target_rule.instrument_allowed}
                          for v in tax], indent=1))
    else:
        print(tax.table())
    return 0


def _decode_one(job):
    image_id, path, dets, cfg = job
    return decode(read_bundle(path), dets, None, cfg, image_id=image_id)


def cmd_decode(args):
    by_image = read_detections(args.detections)
    cfg = DecodeConfig(score_floor=args.floor, detection_top_k=args.topk)
    jobs = [(iid, bundle_path(args.bundles, iid), by_image[iid], cfg) for iid in sorted(by_image)]
    for _, path, _, _ in jobs:
        if not path.exists():
            raise FileNotFoundError(f"missing bundle {path}")
    n_jobs = args.jobs or os.cpu_count() or 1
    if n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(n_jobs) as ex:
            results = list(ex.map(_decode_one, jobs))
    else:
        results = [_decode_one(j) for j in jobs]
    preds = [p for r in results for p in r]
    datamodel.write_predictions(preds, args.output)
    print(f"{len(preds)} triplets from {len(jobs)} images -> {args.output}")
    return 0


def cmd_eval(args):
    gt = datamodel.read_dataset(args.gt)
    preds = datamodel.read_predictions(args.preds)
    scenario = EvalScenario(args.mode, args.role, args.iou)
    report = evaluate(gt, preds, scenario, jobs=args.jobs or 1)
    print(report.table())
    if args.output:
        _dump(report.to_dict(), args.output)
    return 0


def cmd_synth(args):
    out = Path(args.out)
    (out / "bundles").mkdir(parents=True, exist_ok=True)
    noise = NoiseModel(args.sigma_p, args.sigma_e, args.sigma_box)
    cfg = SynthConfig(noise=noise)
    scenes, dets = [], {}
    for seed in _seed_range(args.seeds):
        scene, bundle, d = synth_example(cfg, seed)
        scenes.append(scene)
        dets[scene.image_id] = d
        write_bundle(bundle, bundle_path(out / "bundles", scene.image_id))
    datamodel.write_dataset(scenes, out / "gt.h2o")
    write_detections(dets, out / "detections.json")
    print(f"{len(scenes)} scenes -> {out}")
    return 0


def cmd_bench(args):
    from .bench import bench_decode, format_table
    rows, summary = bench_decode(args.interactions, args.reps, args.topk, args.seed)
    print(format_table(rows, summary))
    if args.output:
        _dump({"rows": rows, "summary": summary}, args.output)
    return 0


def build_parser():
    p = _Parser(prog="h2oi", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("validate", help="check a dataset against the taxonomy rules")
    s.add_argument("dataset")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("stats", help="dataset statistics")
    s.add_argument("dataset")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("taxonomy", help="print the verb registry")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_taxonomy)

    s = sub.add_parser("decode", help="dense-map bundles + detections -> predictions")
    s.add_argument("--bundles", required=True, help="directory of <image_id>.h2odm files")
    s.add_argument("--detections", required=True)
    s.add_argument("-o", "--output", default="preds.h2o")
    s.add_argument("--floor", type=float, default=DecodeConfig.score_floor)
    s.add_argument("--topk", type=int, default=DecodeConfig.detection_top_k)
    s.add_argument("--jobs", type=int, default=0, help="worker processes (0: all cores)")
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("eval", help="AP_agent / AP_role report")
    s.add_argument("gt")
    s.add_argument("preds")
    s.add_argument("--mode", choices=["original", "objectness"], default="original")
    s.add_argument("--role", type=int, choices=[1, 2], default=1)
    s.add_argument("--iou", type=float, default=0.5)
    s.add_argument("-o", "--output", help="write the JSON report here")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", help="write synthetic ground truth, bundles and detections")
    s.add_argument("--seeds", default="0:10", help="'lo:hi' or a count")
    s.add_argument("--out", required=True)
    s.add_argument("--sigma-p", type=float, default=0.0)
    s.add_argument("--sigma-e", type=float, default=0.0)
    s.add_argument("--sigma-box", type=float, default=0.0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("bench", help="decode time against interaction count")
    s.add_argument("--interactions", type=_int_list, default=[1, 10, 50])
    s.add_argument("--reps", type=int, default=30)
    s.add_argument("--topk", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_bench)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(e, file=sys.stderr)
        return 2
    except SystemExit as e:  # --help
        return int(e.code or 0)
    try:
        return args.func(args)
    except (DatasetError, StructuralError, OSError, ValueError) as e:
        print(f"h2oi {args.command}: {e}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
