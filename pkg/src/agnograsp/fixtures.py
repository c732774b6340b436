"""Access to the synthetic grippers and scenes shipped with the package."""

from importlib import resources
from pathlib import Path

DATA = Path(str(resources.files("agnograsp") / "data"))

GRIPPERS = ("planar2", "spatial3", "hand4", "hand5")
SCENES = ("sphere_on_table", "block_on_table")


def gripper_path(name):
    path = DATA / "grippers" / f"{name}.yaml"
    if not path.exists():
        raise FileNotFoundError(f"no fixture gripper {name!r}; known: {', '.join(GRIPPERS)}")
    return path


def scene_path(name):
    path = DATA / "scenes" / f"{name}.yaml"
    if not path.exists():
        raise FileNotFoundError(f"no fixture scene {name!r}; known: {', '.join(SCENES)}")
    return path


def load_fixture_gripper(name):
    from .model import load_gripper

    return load_gripper(gripper_path(name))


def load_fixture_scene(name):
    from .geom.scene import load_scene

    return load_scene(scene_path(name))
