import random

import pytest
from hypothesis import given, settings, strategies as st

from h2oi.taxonomy import Category, StructuralError, TargetKind, validate_scene

import validator_cases as vc
from conftest import make_scene


def test_count_and_split(tax):
    assert tax.count == 51
    split = {c: len(tax.in_category(c)) for c in Category}
    assert split == {Category.POSTURE: 7, Category.MOTION: 11, Category.OBJECT_INTERACTION: 12,
                     Category.SOCIAL: 13, Category.VIOLENT: 8}


def test_posture_and_motion_members(tax):
    assert [v.name for v in tax.in_category(Category.POSTURE)] == [
        "stand", "bend", "sit", "crouch", "lay", "other", "undetermined posture"]
    assert [v.name for v in tax.in_category(Category.MOTION)] == [
        "still", "walk", "run", "ride", "board", "crawl", "jump or fall", "dance", "swim",
        "climb", "undetermined motion"]
    # ids follow enumeration order, posture first
    assert tax.lookup("stand").id == 0
    assert tax.lookup("still").id == 7


def test_board_is_exclusive_motion(tax):
    v = tax.lookup("board")
    assert v.category is Category.MOTION
    assert v.category.exclusive


def test_target_kinds(tax):
    assert tax.target_rule("hug").target_kind is TargetKind.PERSON_ONLY
    assert tax.target_rule("punch").target_kind is TargetKind.OBJECT_OR_PERSON
    assert tax.target_rule("hold").target_kind is TargetKind.OBJECT_ONLY
    assert tax.target_rule("sit").target_kind is TargetKind.OBJECT_OR_PERSON


def test_instrument_verbs(tax):
    allowed = {v.name for v in tax if v.target_rule.instrument_allowed}
    assert allowed == {"point", "use on", "eat", "drink", "point somebody", "act on somebody", "hit"}


def test_exclusive_iff_posture_or_motion(tax):
    for v in tax:
        assert v.category.exclusive == (v.category in (Category.POSTURE, Category.MOTION))
        assert v.category.mandatory == v.category.exclusive


def test_lookup_roundtrip(tax):
    for v in tax:
        assert tax.lookup(v.name) is v
        assert tax.by_id(v.id) is v
    with pytest.raises(KeyError, match="fly"):
        tax.lookup("fly")


def test_table_lists_every_verb(tax):
    table = tax.table()
    assert len(table.splitlines()) == 53
    assert "undetermined motion" in table


def test_minimal_legal_scene():
    sc = make_scene([(1, "person", (0, 0, 10, 20))], [(1, "stand"), (1, "still")])
    assert validate_scene(sc) == []


def test_two_postures():
    sc = make_scene([(1, "person", (0, 0, 10, 20))], [(1, "stand"), (1, "sit"), (1, "still")])
    assert [v.rule for v in validate_scene(sc)] == ["R1"]


def test_posture_motion_on_different_stools():
    sc = make_scene([(1, "person", (0, 0, 10, 20)), (2, "chair", (0, 20, 10, 10)),
                     (3, "chair", (20, 20, 10, 10))],
                    [(1, "stand", 2), (1, "still", 3)])
    assert [(v.rule, v.subject_id) for v in validate_scene(sc)] == [("R2", 1)]


def test_good_fixture():
    assert validate_scene(vc.good_scene()) == []


@pytest.mark.parametrize("name", sorted(vc.CASES))
def test_rule_cases(name):
    got = [(v.rule, v.subject_id) for v in validate_scene(vc.case_scene(name))]
    assert got == vc.CASES[name][1]


def test_unresolved_id_is_structural():
    sc = make_scene([(1, "person", (0, 0, 10, 20))], [(1, "stand", 99), (1, "still", 99)])
    with pytest.raises(StructuralError, match="99"):
        validate_scene(sc)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(sorted(vc.CASES)), st.integers(0, 2**32 - 1))
def test_order_independent(name, seed):
    rnd = random.Random(seed)
    inst = list(vc.INSTANCES)
    ias = list(vc.CASES[name][0])
    rnd.shuffle(inst)
    rnd.shuffle(ias)
    assert validate_scene(make_scene(inst, ias)) == validate_scene(vc.case_scene(name))
