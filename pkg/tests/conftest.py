import pytest
from hypothesis import settings

from h2oi.datamodel import BBox, Instance, InteractionAnnotation, Scene
from h2oi.taxonomy import builtin_taxonomy

# first calls pay numba compilation, so per-example deadlines are meaningless
settings.register_profile("default", deadline=None)
settings.load_profile("default")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def tax():
    return builtin_taxonomy()


def make_scene(instances, interactions, image_id=1, width=640, height=480):
    """``instances``: (id, class, (x, y, w, h)); ``interactions``: tuples
    (subject, verb[, target[, instrument]])."""
    insts = [Instance(i, image_id, BBox(*box), cls) for i, cls, box in instances]
    ias = [InteractionAnnotation(*t) for t in interactions]
    return Scene(image_id, width, height, insts, ias)


@pytest.fixture
def scene_factory():
    return make_scene
