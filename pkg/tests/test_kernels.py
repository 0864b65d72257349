"""The numba and numpy kernel flavours must agree."""
import os
import subprocess
import sys

import numpy as np
import pytest

from h2oi import kernels
from h2oi._backend import HAS_NUMBA

pytestmark = pytest.mark.skipif(not HAS_NUMBA, reason="numba not installed")


def _boxes(rng, n):
    b = rng.uniform(0, 100, (n, 4))
    b[:, 2:] += 1
    return b


def test_iou_matrix():
    rng = np.random.default_rng(1)
    a, b = _boxes(rng, 40), _boxes(rng, 30)
    np.testing.assert_allclose(kernels.iou_matrix_nb(a, b), kernels.iou_matrix_np(a, b),
                               rtol=0, atol=1e-12)


def test_greedy_nms():
    rng = np.random.default_rng(2)
    for _ in range(50):
        n = int(rng.integers(0, 60))
        b = _boxes(rng, n)
        cls = rng.integers(0, 3, n)
        np.testing.assert_array_equal(kernels.greedy_nms_nb(b, cls, 0.4),
                                      kernels.greedy_nms_np(b, cls, 0.4))


def test_focal():
    rng = np.random.default_rng(3)
    p = rng.uniform(0, 1, (50, 12))
    p[0, 0], p[1, 1] = 0.0, 1.0  # clamped cells
    labels = (rng.uniform(size=p.shape) < 0.2).astype(np.uint8)
    rows = np.array([0, 1, 5, 9, 30])
    l1, g1 = kernels.focal_nb(p, labels, rows, 0.25, 2.0, 1e-7)
    l2, g2 = kernels.focal_np(p, labels, rows, 0.25, 2.0, 1e-7)
    assert l1 == pytest.approx(l2, rel=1e-12)
    np.testing.assert_allclose(g1, g2, rtol=1e-12, atol=1e-15)


def test_affinity():
    emb = np.random.default_rng(4).normal(size=(25, 16))
    np.testing.assert_allclose(kernels.affinity_nb(emb, 1.5), kernels.affinity_np(emb, 1.5),
                               rtol=1e-12)


def test_triplet_scores():
    rng = np.random.default_rng(5)
    d, v = 20, 51
    act, pres = rng.uniform(size=(d, v)), rng.uniform(size=(d, v))
    aff = kernels.affinity_np(rng.normal(size=(d, 4)), 1.0)
    legal = rng.uniform(size=(v, d)) < 0.6
    subj = rng.uniform(size=d) < 0.5
    s1, n1 = kernels.triplet_scores_nb(act, pres, aff, legal, subj)
    s2, n2 = kernels.triplet_scores_np(act, pres, aff, legal, subj)
    np.testing.assert_allclose(s1, s2, rtol=1e-12, atol=0)
    np.testing.assert_allclose(n1, n2, rtol=1e-12, atol=0)


def test_backend_name():
    assert kernels.BACKEND in ("numba", "numpy")


def test_env_flag_selects_numpy():
    env = dict(os.environ, H2OI_BACKEND="numpy")
    r = subprocess.run([sys.executable, "-c", "import h2oi; print(h2oi.BACKEND)"], env=env,
                       capture_output=True, text=True)
    assert r.stdout.strip() == "numpy"
    env["H2OI_BACKEND"] = "cuda"
    r = subprocess.run([sys.executable, "-c", "import h2oi"], env=env, capture_output=True,
                       text=True)
    assert r.returncode != 0 and "H2OI_BACKEND" in r.stderr
