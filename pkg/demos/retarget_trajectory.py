"""Map a short four-finger trajectory onto the five-finger hand with joint
matching and keypoint matching."""

import numpy as np

from agnograsp.fixtures import load_fixture_gripper
from agnograsp.model import keypoint_positions, palm_root
from agnograsp.retarget import hand_scale, mr_pipeline

src, tgt = load_fixture_gripper("hand4"), load_fixture_gripper("hand5")
frames = [src.clamp(np.full(src.dof, s)) for s in np.linspace(0.0, 0.6, 5)]
scale = hand_scale(src, tgt)
for strategy in ("jm", "km"):
    out = mr_pipeline(frames, src, tgt, strategy, iters=200)
    # keypoints relative to each palm root; the target's extra finger is ignored
    gap = [np.linalg.norm((keypoint_positions(tgt, b)[:8] - palm_root(tgt))
                          - scale * (keypoint_positions(src, a) - palm_root(src)), axis=1).mean()
           for a, b in zip(frames, out)]
    print(f"{strategy}: mean keypoint gap per frame (m):", np.round(gap, 4).tolist())
