import numpy as np
import pytest

from rafsg.model import BBox, GtObject, GtRelation, SceneGraph, Vocab


def make_scene(boxes, classes=None, relations=(), size=(512, 512), image_id="img"):
    classes = classes or [0] * len(boxes)
    objects = tuple(GtObject(BBox(*b), c) for b, c in zip(boxes, classes))
    rels = tuple(GtRelation(s, o, p) for s, p, o in relations)
    return SceneGraph(image_id, size[0], size[1], objects, rels)


def make_vocab(n_classes=10, n_predicates=5):
    return Vocab(
        tuple(f"c{i}" for i in range(n_classes)), tuple(f"p{i}" for i in range(n_predicates))
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
