"""Baseline transfer between grippers: joint matching (JM) and keypoint
matching (KM), applied offline to trajectories (MR) or online around a
policy trained on another gripper (PT)."""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adapt import _descent
from .model import keypoint_positions, palm_root


def rest_configuration(model):
    return model.clamp(np.zeros(model.dof))


def read_name_map(path):
    """Parse ``source_joint target_joint`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{n}: expected 'source_joint target_joint'")
        out[parts[0]] = parts[1]
    return out


def invert_name_map(name_map):
    return {t: s for s, t in name_map.items()}


def joint_matching_map(source, q_source, target, name_map=None):
    """Copy mapped joint angles with linear limit-interval rescaling.

    ``name_map`` maps source joint names to target joint names (default:
    joints with equal names). Unmapped target joints take their rest value.
    """
    if name_map is None:
        name_map = {n: n for n in source.joint_names if n in target.joint_names}
    q_source = np.asarray(q_source, dtype=float)
    q = rest_configuration(target).copy()
    for s_name, t_name in name_map.items():
        if s_name not in source.joint_names:
            raise KeyError(f"unknown source joint {s_name!r}")
        if t_name not in target.joint_names:
            raise KeyError(f"unknown target joint {t_name!r}")
        i = source.joint_names.index(s_name)
        j = target.joint_names.index(t_name)
        span = source.upper[i] - source.lower[i]
        u = (q_source[i] - source.lower[i]) / span if span > 0 else 0.0
        q[j] = target.lower[j] + u * (target.upper[j] - target.lower[j])
    return target.clamp(q)


def _middle_finger(model):
    return min(2, model.n_fingers - 1)


def hand_scale(source, target):
    """Ratio of rest palm-to-middle-fingertip lengths, target over source."""
    def length(m):
        tips = keypoint_positions(m, rest_configuration(m)).reshape(-1, 2, 3)[:, 1]
        return float(np.linalg.norm(tips[_middle_finger(m)] - palm_root(m)))

    return length(target) / length(source)


@dataclass
class KMResult:
    q: np.ndarray
    residual: float
    iterations: int
    history: list


def keypoint_matching_solve(source_keypoints, target, q_init, scale=1.0, source_p0=None,
                            finger_map=None, iters=500, step=0.5):
    """Fit target joints so its keypoints match scaled source keypoints.

    Source keypoints (2K_s, 3) are scaled about the source palm root
    ``source_p0`` and placed at the target palm root. ``finger_map[k]`` names
    the source finger matched by target finger ``k`` (default: finger ``k``
    when the source has one); ``None`` leaves that finger out of the objective.
    Returns the best iterate and its residual norm.
    """
    src = np.asarray(source_keypoints, dtype=float).reshape(-1, 2, 3)
    K = target.n_fingers
    if finger_map is None:
        finger_map = [k if k < len(src) else None for k in range(K)]
    finger_map = list(finger_map)
    used = [k for k in range(K) if finger_map[k] is not None] if len(finger_map) == K else []
    if len(finger_map) != K or any(finger_map[k] >= len(src) for k in used):
        raise ValueError("finger map does not match the finger counts")
    p0s = np.zeros(3) if source_p0 is None else np.asarray(source_p0, dtype=float)
    goal = np.zeros((K, 2, 3))
    mask = np.zeros((K, 2, 1))
    for k in used:
        goal[k] = palm_root(target) + scale * (src[finger_map[k]] - p0s)
        mask[k] = 1.0
    goal, mask = goal.reshape(-1, 3), mask.reshape(-1, 1)
    atts = target.keypoint_attachments()
    links = np.array([a.link for a in atts], dtype=np.int64)

    def obj(q):
        frames = target.link_frames(q, return_joints=True)
        e = keypoint_positions(target, q, frames[0])
        r = (e - goal) * mask
        J = target.point_jacobian(q, links, e, frames=frames)
        return 0.5 * float(np.sum(r * r)), np.einsum("nic,ni->c", J, r)

    q, f, hist, it = _descent(obj, np.asarray(q_init, dtype=float), target.lower, target.upper,
                              iters, step)
    return KMResult(q, float(np.sqrt(2.0 * f)), it, [float(np.sqrt(2.0 * h)) for h in hist])


def keypoint_matching_map(source, q_source, target, q_init=None, scale=None, finger_map=None,
                          iters=500):
    scale = hand_scale(source, target) if scale is None else scale
    q_init = rest_configuration(target) if q_init is None else q_init
    kp = keypoint_positions(source, q_source)
    return keypoint_matching_solve(kp, target, q_init, scale, palm_root(source), finger_map,
                                   iters).q


def _mapper(strategy, source, target, name_map, finger_map, iters):
    if strategy == "jm":
        return lambda q, prev: joint_matching_map(source, q, target, name_map)
    if strategy == "km":
        # warm start from the previous frame
        return lambda q, prev: keypoint_matching_map(source, q, target, prev, None, finger_map,
                                                     iters)
    raise ValueError(f"unknown strategy {strategy!r}; use 'jm' or 'km'")


def mr_pipeline(frames, source, target, strategy="jm", name_map=None, finger_map=None,
                iters=500):
    """Offline motion retargeting of recorded source joint vectors."""
    fwd = _mapper(strategy, source, target, name_map, finger_map, iters)
    out, prev = [], None
    for q in frames:
        prev = fwd(np.asarray(q, dtype=float), prev)
        out.append(prev)
    return out


def pt_pipeline(policy_step, source, target, q_target, steps, strategy="jm", name_map=None,
                finger_map=None, iters=500):
    """Online policy transfer.

    Each step maps the target configuration onto the source gripper, asks
    ``policy_step(q_source)`` for the next source configuration and maps it
    back to the target.
    """
    inv_names = None if name_map is None else invert_name_map(name_map)
    inv_fingers = None
    if finger_map is not None:
        inv_fingers = [finger_map.index(k) if k in finger_map else None
                       for k in range(source.n_fingers)]
    back = _mapper(strategy, target, source, inv_names, inv_fingers, iters)
    fwd = _mapper(strategy, source, target, name_map, finger_map, iters)
    q = np.asarray(q_target, dtype=float)
    out, qs = [q], None
    for _ in range(steps):
        qs = back(q, qs)
        q = fwd(policy_step(qs), q)
        out.append(q)
    return out
