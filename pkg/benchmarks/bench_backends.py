"""Time each hot kernel under numba and numpy, plus an end-to-end decode.

    python benchmarks/bench_backends.py [--reps 50] [--json out.json]

The end-to-end rows run decode in a subprocess per backend, since the
backend is bound at import time from H2OI_BACKEND.
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from h2oi import kernels
from h2oi._backend import HAS_NUMBA

DECODE_SNIPPET = """
import sys, time, numpy as np
from h2oi.bench import BENCH_NOISE, BENCH_SYNTH, bench_decode
rows, _ = bench_decode((10,), repetitions=int(sys.argv[1]), top_k=100)
print(rows[0]["median_ms"])
"""


def _median_ms(fn, reps):
    fn()  # warm-up, includes jit compilation
    ts = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return 1e3 * float(np.median(ts))


def kernel_cases(seed=0):
    rng = np.random.default_rng(seed)
    boxes = rng.uniform(0, 400, (100, 4))
    boxes[:, 2:] += 5
    anchors = rng.uniform(0, 400, (12000, 4))
    anchors[:, 2:] += 5
    classes = rng.integers(0, 5, 100)
    p = rng.uniform(size=(12000, 102))
    labels = (rng.uniform(size=p.shape) < 0.05).astype(np.uint8)
    rows = np.sort(rng.choice(12000, 600, replace=False))
    emb = rng.normal(size=(100, 16))
    act, pres = rng.uniform(size=(100, 51)), rng.uniform(size=(100, 51))
    aff = kernels.affinity_np(emb, 1.0)
    legal = rng.uniform(size=(51, 100)) < 0.7
    subj = rng.uniform(size=100) < 0.5
    return {
        "iou_matrix 12000x20": ("iou_matrix", (anchors, boxes[:20])),
        "greedy_nms n=100": ("greedy_nms", (boxes, classes, 0.5)),
        "focal 600 rows": ("focal", (p, labels, rows, 0.25, 2.0, 1e-7)),
        "affinity D=100": ("affinity", (emb, 1.0)),
        "triplet_scores D=100": ("triplet_scores", (act, pres, aff, legal, subj)),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=50)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args(argv)
    if not HAS_NUMBA:
        sys.exit("numba is not installed; nothing to compare")

    results = []
    for label, (name, a) in kernel_cases().items():
        t_nb = _median_ms(lambda: getattr(kernels, name + "_nb")(*a), args.reps)
        t_np = _median_ms(lambda: getattr(kernels, name + "_np")(*a), args.reps)
        results.append({"case": label, "numba_ms": t_nb, "numpy_ms": t_np})

    e2e = {}
    for backend in ("numba", "numpy"):
        env = dict(os.environ, H2OI_BACKEND=backend)
        out = subprocess.run([sys.executable, "-c", DECODE_SNIPPET, str(args.reps)], env=env,
                             capture_output=True, text=True, check=True)
        e2e[backend] = float(out.stdout.strip().splitlines()[-1])
    results.append({"case": "decode K=100 (end to end)", "numba_ms": e2e["numba"],
                    "numpy_ms": e2e["numpy"]})

    print(f"{'case':<28} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8}")
    for r in results:
        print(f"{r['case']:<28} {r['numba_ms']:>10.3f} {r['numpy_ms']:>10.3f} "
              f"{r['numpy_ms'] / r['numba_ms']:>7.2f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=1)


if __name__ == "__main__":
    main()
