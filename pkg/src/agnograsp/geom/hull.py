"""Convex hulls and the half-space signed distance used for penetration terms."""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull as _QHull
from scipy.spatial import QhullError


class DegenerateHullError(ValueError):
    pass


@dataclass(frozen=True)
class ConvexHull:
    """Closed convex polytope.

    ``normals`` (F, 3) are outward unit normals and ``offsets`` (F,) satisfy
    ``normals @ x + offsets <= 0`` for every point of the hull.
    """

    vertices: np.ndarray
    faces: np.ndarray
    normals: np.ndarray
    offsets: np.ndarray
    centroid: np.ndarray

    def transformed(self, T):
        R, t = T[:3, :3], T[:3, 3]
        n = self.normals @ R.T
        return ConvexHull(
            vertices=self.vertices @ R.T + t,
            faces=self.faces,
            normals=n,
            offsets=self.offsets - n @ t,
            centroid=R @ self.centroid + t,
        )


def convex_hull(points):
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) < 4:
        raise DegenerateHullError("degenerate hull")
    centered = pts - pts.mean(axis=0)
    scale = max(np.abs(centered).max(), 1e-300)
    if np.linalg.matrix_rank(centered / scale, tol=1e-10) < 3:
        raise DegenerateHullError("degenerate hull")
    try:
        qh = _QHull(pts)
    except QhullError as exc:
        raise DegenerateHullError("degenerate hull") from exc
    eq = qh.equations
    # qhull splits coplanar facets into triangles; merge duplicated planes
    keys = np.round(eq / max(scale, 1.0), 12)
    _, first = np.unique(keys, axis=0, return_index=True)
    first = np.sort(first)
    normals, offsets = eq[first, :3], eq[first, 3]
    vidx = np.unique(qh.simplices)
    return ConvexHull(
        vertices=pts[vidx],
        faces=qh.simplices.copy(),
        normals=normals,
        offsets=offsets,
        centroid=pts[vidx].mean(axis=0),
    )


def signed_distance_hull(hull, p, return_grad=False):
    """Signed distance from points to a convex hull, positive inside.

    Inside the hull this is the exact distance to the boundary (the smallest
    face-plane distance). Outside it is minus the largest face-plane
    distance, which never overestimates the true separation. The function is
    1-Lipschitz everywhere.

    With ``return_grad`` the gradient with respect to ``p`` is returned as
    well (the negated normal of the active face).
    """
    p = np.asarray(p, dtype=float)
    plane = p @ hull.normals.T + hull.offsets  # (..., F), <= 0 inside
    k = np.argmax(plane, axis=-1)
    d = -np.take_along_axis(plane, k[..., None], axis=-1)[..., 0]
    if return_grad:
        return d, -hull.normals[k]
    return d
