import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from h2oi.dense import AnchorGrid, AnchorGridConfig, assign_anchors
from h2oi.evaluator import EvalScenario, Mode, evaluate
from h2oi.geometry import iou_matrix
from h2oi.synthgen import (AnchorCollisionError, NoiseModel, PlacementError, SynthConfig,
                           codeword, generate_scene, perturb, render_perfect_bundle,
                           synth_example)
from h2oi.taxonomy import Category, validate_scene

from conftest import make_scene
from oracles import synth_run


def test_deterministic():
    cfg = SynthConfig()
    assert generate_scene(cfg, 17) == generate_scene(cfg, 17)
    a, b = synth_example(SynthConfig(noise=NoiseModel(0.2, 0.3, 0.05)), 4), \
        synth_example(SynthConfig(noise=NoiseModel(0.2, 0.3, 0.05)), 4)
    assert a[0] == b[0] and a[2] == b[2]
    for x, y in zip(a[1].flat(), b[1].flat()):
        np.testing.assert_array_equal(x, y)


@settings(max_examples=100)
@given(st.integers(0, 100_000))
def test_generated_scenes_validate(tax, seed):
    sc = generate_scene(SynthConfig(), seed)
    assert validate_scene(sc, tax) == []
    boxes = [i.bbox for i in sc.instances]
    ov = iou_matrix(boxes, boxes)
    np.fill_diagonal(ov, 0)
    assert ov.max(initial=0) <= SynthConfig().max_iou


def test_social_only_targets_are_persons(tax):
    cfg = SynthConfig(n_persons=(2, 2), categories=(Category.SOCIAL,), p_person_pair=1.0)
    seen = 0
    for seed in range(100):
        sc = generate_scene(cfg, seed)
        insts = {i.id: i for i in sc.instances}
        for ia in sc.interactions:
            if not tax.category(ia.verb).exclusive and ia.target_id is not None:
                assert insts[ia.target_id].is_person
                seen += 1
    assert seen > 50


def test_every_instance_has_a_dominating_anchor(tax):
    g = AnchorGrid(SynthConfig().image_size)
    for seed in range(30):
        assert assign_anchors(g, generate_scene(SynthConfig(), seed), tax).uncovered == []


def test_codewords_are_separated():
    cws = np.array([codeword(k, 16, 24.0) for k in range(200)])
    d = np.linalg.norm(cws[:, None] - cws[None], axis=-1)
    np.fill_diagonal(d, np.inf)
    assert d.min() >= 24.0
    with pytest.raises(ValueError):
        codeword(10, 1, 1.0)


def test_presence_zero_for_empty_target(tax):
    for seed in range(20):
        sc = generate_scene(SynthConfig(), seed)
        g = AnchorGrid(SynthConfig().image_size)
        bundle, _ = render_perfect_bundle(sc, g, tax)
        _, pres, _ = bundle.flat()
        asg = assign_anchors(g, sc, tax)
        boxed = {(ia.subject_id, ia.verb) for ia in sc.interactions if ia.target_id is not None}
        for ia in sc.interactions:
            if ia.target_id is None and (ia.subject_id, ia.verb) not in boxed:
                rows = asg.instance_anchors[ia.subject_id]
                assert not pres[rows, tax.lookup(ia.verb).id].any()


def test_detections_sit_on_their_anchor(tax):
    sc = generate_scene(SynthConfig(), 8)
    g = AnchorGrid(SynthConfig().image_size)
    _, dets = render_perfect_bundle(sc, g, tax)
    for d in dets:
        assert d.score == 1.0
        np.testing.assert_array_equal(g.boxes[g.flat_index(d.anchor_ref)], d.bbox.to_list())


def test_collision_raises(tax):
    grid = AnchorGrid((64, 64), AnchorGridConfig(strides=(32,), scales=(1.0,), ratios=(1.0,),
                                                 base_size=1.0))
    sc = make_scene([(1, "person", (0, 0, 32, 32)), (2, "person", (0, 0, 32, 32))],
                    [(1, "stand"), (1, "still"), (2, "stand"), (2, "still")],
                    width=64, height=64)
    with pytest.raises(AnchorCollisionError):
        render_perfect_bundle(sc, grid, tax)


def test_placement_error():
    with pytest.raises(PlacementError):
        generate_scene(SynthConfig(image_size=(8, 8)), 0)
    with pytest.raises(PlacementError):
        generate_scene(SynthConfig(n_persons=(60, 60), max_retries=5), 0)


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(n_persons=(3, 1))
    with pytest.raises(ValueError):
        SynthConfig(n_persons=(0, 1))
    with pytest.raises(ValueError):
        NoiseModel(sigma_p=-0.1)


def _bundle(seed=0):
    return synth_example(SynthConfig(), seed)[1]


def test_perturb_zero_is_identity():
    b = _bundle()
    out = perturb(b, NoiseModel(), seed=3)
    for x, y in zip(b.flat(), out.flat()):
        np.testing.assert_array_equal(x, y)
    out.levels[0].verb[...] = 0.5
    assert b.levels[0].verb.max() <= 1.0 and not (b.levels[0].verb == 0.5).all()


@settings(max_examples=10)
@given(st.floats(0.0, 3.0), st.floats(0.0, 5.0), st.integers(0, 1000))
def test_perturb_clips_and_is_deterministic(sp, se, seed):
    b = _bundle()
    n = NoiseModel(sp, se)
    x, y = perturb(b, n, seed), perturb(b, n, seed)
    for u, w in zip(x.flat(), y.flat()):
        np.testing.assert_array_equal(u, w)
    x.check()


def test_render_decode_evaluate_all_scenarios():
    scenes, preds = synth_run(range(30))
    for mode in Mode:
        for role in (1, 2):
            rep = evaluate(scenes, preds, EvalScenario(mode, role))
            assert rep.mean_ap_agent == 1.0 and rep.mean_ap_role == 1.0
