"""Triangle meshes: OBJ I/O, primitive builders, surface sampling."""

from functools import cached_property
from pathlib import Path

import numpy as np

from .bvh import BVH
from ..rotations import transform_points


class TriMesh:
    """Indexed triangle mesh with lazily built query structures.

    Faces are assumed counter-clockwise when seen from outside, so face
    normals point outward.
    """

    def __init__(self, vertices, faces):
        self.vertices = np.ascontiguousarray(vertices, dtype=float).reshape(-1, 3)
        self.faces = np.ascontiguousarray(faces, dtype=np.int64).reshape(-1, 3)
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError("face index out of range")

    def __repr__(self):
        return f"TriMesh(V={len(self.vertices)}, F={len(self.faces)})"

    @property
    def triangles(self):
        return self.vertices[self.faces]

    @cached_property
    def face_normals(self):
        t = self.triangles
        n = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        return n / np.where(norm > 0, norm, 1.0)

    @cached_property
    def areas(self):
        t = self.triangles
        return 0.5 * np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)

    @cached_property
    def bvh(self):
        return BVH(self.triangles)

    @cached_property
    def edges(self):
        """Unique undirected edges as (E, 2) vertex indices."""
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    def closest(self, points):
        return self.bvh.closest(points)

    def transformed(self, T):
        return TriMesh(transform_points(T, self.vertices), self.faces)

    def scaled(self, s):
        return TriMesh(self.vertices * np.asarray(s, dtype=float), self.faces)

    def bounding_radius(self, center=None):
        c = self.vertices.mean(axis=0) if center is None else np.asarray(center, dtype=float)
        return float(np.linalg.norm(self.vertices - c, axis=1).max())

    def sample_surface(self, n, rng):
        """Area-weighted uniform samples; returns ``(points, face_index)``."""
        if n == 0 or len(self.faces) == 0:
            return np.zeros((0, 3)), np.zeros(0, dtype=np.int64)
        p = self.areas / self.areas.sum()
        face = rng.choice(len(self.faces), size=n, p=p)
        u, v = rng.random(n), rng.random(n)
        flip = u + v > 1.0
        u[flip], v[flip] = 1.0 - u[flip], 1.0 - v[flip]
        t = self.triangles[face]
        pts = t[:, 0] + u[:, None] * (t[:, 1] - t[:, 0]) + v[:, None] * (t[:, 2] - t[:, 0])
        return pts, face


def merge_meshes(meshes):
    verts, faces, off = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + off)
        off += len(m.vertices)
    if not verts:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    return TriMesh(np.concatenate(verts), np.concatenate(faces))


def load_obj(path, scale=1.0):
    """Read vertices and faces from an OBJ file; polygons are fan-split."""
    verts, faces = [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = []
                for tok in parts[1:]:
                    i = int(tok.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
    if not verts or not faces:
        raise ValueError(f"{path}: no geometry")
    return TriMesh(np.asarray(verts) * scale, np.asarray(faces))


def save_obj(mesh, path):
    path = Path(path)
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def box_mesh(size=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0)):
    sx, sy, sz = (0.5 * float(s) for s in size)
    v = np.array([
        [-sx, -sy, -sz], [sx, -sy, -sz], [sx, sy, -sz], [-sx, sy, -sz],
        [-sx, -sy, sz], [sx, -sy, sz], [sx, sy, sz], [-sx, sy, sz],
    ]) + np.asarray(center, dtype=float)
    f = np.array([
        [0, 2, 1], [0, 3, 2],  # -z
        [4, 5, 6], [4, 6, 7],  # +z
        [0, 1, 5], [0, 5, 4],  # -y
        [2, 3, 7], [2, 7, 6],  # +y
        [1, 2, 6], [1, 6, 5],  # +x
        [3, 0, 4], [3, 4, 7],  # -x
    ])
    return TriMesh(v, f)


def icosphere(radius=1.0, subdivisions=3, center=(0.0, 0.0, 0.0)):
    t = (1.0 + 5 ** 0.5) / 2.0
    v = [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
         [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
         [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]]
    f = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
         [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
         [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
         [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    verts = [np.asarray(p, dtype=float) / np.linalg.norm(p) for p in v]
    for _ in range(subdivisions):
        cache = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        nf = []
        for a, b, c in f:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nf += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        f = nf
    return TriMesh(np.asarray(verts) * radius + np.asarray(center, dtype=float), np.asarray(f))


def plane_mesh(size=1.0, height=0.0, center_xy=(0.0, 0.0)):
    """Upward-facing square in the plane z = height."""
    h = 0.5 * size
    cx, cy = center_xy
    v = np.array([[cx - h, cy - h, height], [cx + h, cy - h, height],
                  [cx + h, cy + h, height], [cx - h, cy + h, height]])
    return TriMesh(v, np.array([[0, 1, 2], [0, 2, 3]]))
