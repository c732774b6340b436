"""Sample the IBS between the four-finger hand and the sphere scene and
write it as a PLY file next to this script."""

from pathlib import Path

import numpy as np

from agnograsp.fixtures import load_fixture_gripper, load_fixture_scene
from agnograsp.geom.sampling import sample_initial_poses
from agnograsp.ibs import IbsParams, sample_ibs, write_ibs_ply

hand = load_fixture_gripper("hand4")
scene = load_fixture_scene("sphere_on_table")
base = sample_initial_poses(scene.object_center, 1, seed=0, radius=0.20, model=hand)[0]
cloud = sample_ibs(scene, hand, np.zeros(hand.dof), base, IbsParams(seed=0))

out = Path(__file__).with_name("ibs_hand4_sphere.ply")
write_ibs_ply(out, cloud)
counts = np.bincount(cloud.component, minlength=hand.n_components)
print(f"{len(cloud)} points -> {out}")
print("points per component (palm, thumb, f1, f2, f3):", counts.tolist())
print(f"max |d_s - d_g| = {np.abs(cloud.d_s - cloud.d_g).max():.2e} m")
