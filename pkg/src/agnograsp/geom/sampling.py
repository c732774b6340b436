"""Point sampling utilities: farthest-point downsampling, link surface samples,
and initial gripper poses around an object."""

import numpy as np


def farthest_point_sampling(points, n, seed=0):
    """Indices of ``n`` points chosen greedily to maximise the minimum spacing.

    The first index is drawn from ``seed``; ties go to the lowest index, so the
    result is a deterministic function of ``(points, n, seed)``.
    """
    points = np.asarray(points, dtype=float)
    m = len(points)
    if n >= m:
        return np.arange(m)
    rng = np.random.default_rng(seed)
    idx = np.empty(n, dtype=np.int64)
    idx[0] = rng.integers(m)
    d = np.sum((points - points[idx[0]]) ** 2, axis=1)
    for i in range(1, n):
        idx[i] = int(np.argmax(d))
        d = np.minimum(d, np.sum((points - points[idx[i]]) ** 2, axis=1))
    return idx


def sample_link_surface(model, points_per_link=64, seed=0):
    """Area-weighted surface samples per link in the link frame.

    Links without geometry get an empty (0, 3) array.
    """
    rng = np.random.default_rng(seed)
    out = []
    for link in model.links:
        if link.mesh is None:
            out.append(np.zeros((0, 3)))
        else:
            out.append(link.mesh.sample_surface(points_per_link, rng)[0])
    return out


def thumb_direction(model):
    """Rest-pose direction from the palm root to the thumb tip, projected into
    the palm plane (perpendicular to ``d_up``), in the gripper-local frame."""
    from ..model import keypoint_state

    up = model.d_up
    if model.n_fingers:
        ks = keypoint_state(model, np.zeros(model.dof))
        v = ks.fingers[0, 1] - ks.p0
        v = v - (v @ up) * up
        if np.linalg.norm(v) > 1e-9:
            return v / np.linalg.norm(v)
    # no usable thumb: any direction in the palm plane
    a = np.eye(3)[np.argmin(np.abs(up))]
    v = a - (a @ up) * up
    return v / np.linalg.norm(v)


def _frame(first, second):
    second = second - (second @ first) * first
    second = second / np.linalg.norm(second)
    return np.stack([first, second, np.cross(first, second)], axis=1)


def sample_initial_poses(object_center, count, seed=0, radius=0.20, model=None,
                         d_up=(0.0, 0.0, 1.0), thumb=None):
    """Gripper base poses on the upper hemisphere around ``object_center``.

    The palm normal (``d_up``) points at the object centre and the thumb
    direction is turned toward world +z projected into the palm plane.
    """
    from ..model import BasePose
    from ..rotations import matrix_to_rotvec

    center = np.asarray(object_center, dtype=float)
    if model is not None:
        up = model.d_up
        th = thumb_direction(model)
    else:
        up = np.asarray(d_up, dtype=float) / np.linalg.norm(d_up)
        th = thumb
        if th is None:
            a = np.eye(3)[np.argmin(np.abs(up))]
            th = a - (a @ up) * up
        th = np.asarray(th, dtype=float)
    local = _frame(up, th)

    rng = np.random.default_rng(seed)
    poses = []
    for _ in range(count):
        v = rng.normal(size=3)
        v[2] = abs(v[2])
        v /= np.linalg.norm(v)
        pos = center + radius * v
        toward = -v
        zp = np.array([0.0, 0.0, 1.0]) - toward[2] * toward
        if np.linalg.norm(zp) < 1e-9:
            # directly above the object: +z has no in-plane component
            zp = np.array([1.0, 0.0, 0.0]) - toward[0] * toward
        world = _frame(toward, zp)
        R = world @ local.T
        poses.append(BasePose(pos, matrix_to_rotvec(R)))
    return poses
