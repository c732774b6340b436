import numpy as np
import pytest

from agnograsp.fixtures import load_fixture_gripper, load_fixture_scene
from agnograsp.model import load_gripper

from oracles import UNIT_BOX


def _joint(name, parent, child, xyz, axis, limit, jtype="revolute"):
    return {"name": name, "type": jtype, "parent": parent, "child": child,
            "origin": {"xyz": list(xyz)}, "axis": list(axis), "limit": list(limit)}


def planar_unit_finger_spec():
    """Two unit links rotating about z; the tip sits 2 m out at rest."""
    return {
        "name": "unit2",
        "links": [{"name": "base"}, {"name": "l1"}, {"name": "l2"}],
        "joints": [_joint("j1", "base", "l1", (0, 0, 0), (0, 0, 1), (-3.0, 3.0)),
                   _joint("j2", "l1", "l2", (1, 0, 0), (0, 0, 1), (-3.0, 3.0))],
        "fingers": [["l1", "l2"]],
        "keypoints": {"palm": {"link": "base"},
                      "fingers": [{"middle": {"link": "l2"},
                                   "tip": {"link": "l2", "offset": [1, 0, 0]}}]},
    }


def one_dof_finger_spec():
    """A single revolute joint with its tip keypoint at radius 1."""
    return {
        "name": "chord",
        "links": [{"name": "base"}, {"name": "l1"}],
        "joints": [_joint("j1", "base", "l1", (0, 0, 0), (0, 0, 1), (-1.0, 1.0))],
        "fingers": [["l1"]],
        "keypoints": {"palm": {"link": "base"},
                      "fingers": [{"middle": {"link": "l1"},
                                   "tip": {"link": "l1", "offset": [1, 0, 0]}}]},
    }


def two_box_spec(overlap=0.2):
    """Two unit boxes on prismatic x-joints under a geometry-free root.

    At q = 0 box B is centred at ``1 - overlap`` so the boxes overlap by
    ``overlap`` along x.
    """
    box = {"mesh": UNIT_BOX}
    return {
        "name": "boxes",
        "links": [{"name": "base"}, {"name": "A", **box}, {"name": "B", **box}],
        "joints": [_joint("ja", "base", "A", (0, 0, 0), (1, 0, 0), (-1.0, 1.0), "prismatic"),
                   _joint("jb", "base", "B", (1 - overlap, 0, 0), (1, 0, 0), (-1.0, 1.0),
                          "prismatic")],
        "fingers": [["A"], ["B"]],
        "keypoints": {"palm": {"link": "base"},
                      "fingers": [{"middle": {"link": "A"}, "tip": {"link": "A"}},
                                  {"middle": {"link": "B"}, "tip": {"link": "B"}}]},
    }


@pytest.fixture(scope="session")
def unit_finger():
    return load_gripper(planar_unit_finger_spec())


@pytest.fixture(scope="session")
def chord_finger():
    return load_gripper(one_dof_finger_spec())


@pytest.fixture(scope="session")
def two_boxes():
    return load_gripper(two_box_spec())


@pytest.fixture(scope="session")
def planar2():
    return load_fixture_gripper("planar2")


@pytest.fixture(scope="session")
def spatial3():
    return load_fixture_gripper("spatial3")


@pytest.fixture(scope="session")
def hand4():
    return load_fixture_gripper("hand4")


@pytest.fixture(scope="session")
def hand5():
    return load_fixture_gripper("hand5")


@pytest.fixture(scope="session")
def sphere_scene():
    return load_fixture_scene("sphere_on_table")


@pytest.fixture(scope="session")
def block_scene():
    return load_fixture_scene("block_on_table")


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# ------------------------------------------------------------ acceptance log
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
