"""Small rotation helpers shared by the kinematics and geometry code.

Everything here works on stacked inputs: a leading batch shape is carried
through untouched.
"""

import numpy as np


def skew(v):
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def axis_angle_matrix(axis, angle):
    """Rotation matrices about unit ``axis`` (..., 3) by ``angle`` (...)."""
    axis = np.asarray(axis, dtype=float)
    angle = np.asarray(angle, dtype=float)
    c = np.cos(angle)[..., None, None]
    s = np.sin(angle)[..., None, None]
    K = skew(axis)
    outer = axis[..., :, None] * axis[..., None, :]
    eye = np.eye(3)
    return c * eye + s * K + (1.0 - c) * outer


def rotvec_to_matrix(rv):
    rv = np.asarray(rv, dtype=float)
    theta = np.linalg.norm(rv, axis=-1)
    safe = np.where(theta > 1e-12, theta, 1.0)
    axis = rv / safe[..., None]
    R = axis_angle_matrix(axis, theta)
    small = theta <= 1e-12
    if np.any(small):
        # first order keeps tiny rotations exact to machine precision
        R = np.where(small[..., None, None], np.eye(3) + skew(rv), R)
    return R


def matrix_to_rotvec(R):
    """Axis-angle vector with magnitude in [0, pi]."""
    from scipy.spatial.transform import Rotation

    R = np.asarray(R, dtype=float)
    flat = R.reshape(-1, 3, 3)
    rv = Rotation.from_matrix(flat).as_rotvec()
    return rv.reshape(R.shape[:-2] + (3,))


def canonical_rotvec(rv):
    """Wrap an axis-angle vector so that its angle is strictly below pi.

    Angles of exactly pi are kept (both signs describe the same rotation).
    """
    rv = np.asarray(rv, dtype=float)
    return matrix_to_rotvec(rotvec_to_matrix(rv))


def rpy_matrix(rpy):
    """Fixed-axis roll/pitch/yaw, R = Rz(yaw) Ry(pitch) Rx(roll)."""
    r, p, y = (float(a) for a in rpy)
    cr, sr = np.cos(r), np.sin(r)
    cp, sp = np.cos(p), np.sin(p)
    cy, sy = np.cos(y), np.sin(y)
    return np.array([
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ])


def make_transform(R=None, t=None):
    T = np.eye(4)
    if R is not None:
        T[:3, :3] = R
    if t is not None:
        T[:3, 3] = t
    return T


def invert_transform(T):
    T = np.asarray(T, dtype=float)
    R = T[..., :3, :3]
    t = T[..., :3, 3]
    Ri = np.swapaxes(R, -1, -2)
    out = np.zeros_like(T)
    out[..., :3, :3] = Ri
    out[..., :3, 3] = -np.einsum("...ij,...j->...i", Ri, t)
    out[..., 3, 3] = 1.0
    return out


def transform_points(T, pts):
    """Apply (..., 4, 4) transforms to (..., n, 3) points."""
    T = np.asarray(T, dtype=float)
    pts = np.asarray(pts, dtype=float)
    return np.einsum("...ij,...nj->...ni", T[..., :3, :3], pts) + T[..., None, :3, 3]


def random_rotation(rng):
    from scipy.spatial.transform import Rotation

    return Rotation.random(random_state=rng).as_matrix()
