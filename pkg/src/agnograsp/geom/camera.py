"""Pinhole depth camera and hidden-surface culling."""

from dataclasses import dataclass, field

import numpy as np

from ..rotations import make_transform


@dataclass
class Camera:
    """Pinhole camera; ``pose`` maps camera coordinates to world.

    Camera axes follow the usual vision convention: +z along the optical
    axis, +x to the right, +y down the image.
    """

    fx: float = 300.0
    fy: float = 300.0
    cx: float = 159.5
    cy: float = 119.5
    width: int = 320
    height: int = 240
    pose: np.ndarray = field(default_factory=lambda: np.eye(4))

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "pose" in d:
            d["pose"] = np.asarray(d["pose"], dtype=float).reshape(4, 4)
        return cls(**d)

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height, "pose": self.pose.tolist()}

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0), **kw):
        eye = np.asarray(eye, dtype=float)
        z = np.asarray(target, dtype=float) - eye
        z /= np.linalg.norm(z)
        x = np.cross(z, np.asarray(up, dtype=float))
        if np.linalg.norm(x) < 1e-9:
            x = np.cross(z, [1.0, 0.0, 0.0])
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        return cls(pose=make_transform(np.stack([x, y, z], axis=1), eye), **kw)

    def pixel_rays(self):
        """World-frame ray directions through every pixel centre, (H*W, 3).

        Directions have unit z in the camera frame, so ray parameter = depth.
        """
        u, v = np.meshgrid(np.arange(self.width), np.arange(self.height))
        d = np.stack([(u.ravel() - self.cx) / self.fx,
                      (v.ravel() - self.cy) / self.fy,
                      np.ones(u.size)], axis=1)
        return d @ self.pose[:3, :3].T


def render_depth(scene, camera):
    """Depth image (H, W) and hit face per pixel (-1 on a miss)."""
    dirs = camera.pixel_rays()
    t, face = scene.mesh.bvh.raycast(camera.pose[:3, 3][None], dirs)
    return t.reshape(camera.height, camera.width), face.reshape(camera.height, camera.width)


def partial_view_cull(scene, camera):
    """Back-projected first-hit points seen by ``camera``.

    Returns ``(points, foreground_flags)``; an empty scene gives empty arrays.
    """
    if scene is None or scene.mesh is None or len(scene.mesh.faces) == 0:
        return np.zeros((0, 3)), np.zeros(0, dtype=bool)
    dirs = camera.pixel_rays()
    t, face = scene.mesh.bvh.raycast(camera.pose[:3, 3][None], dirs)
    hit = face >= 0
    pts = camera.pose[:3, 3] + t[hit, None] * dirs[hit]
    return pts, scene.foreground[face[hit]]
