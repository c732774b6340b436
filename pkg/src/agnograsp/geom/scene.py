"""Scenes and closest-point queries against scenes and posed grippers."""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .mesh import TriMesh, merge_meshes, plane_mesh
from ..rotations import transform_points


@dataclass
class ClosestHit:
    """Result of a closest-point query; fields are batched over queries.

    ``source`` is the foreground flag for scene queries and the component
    index (palm = 0, finger k = k) for gripper queries.
    """

    distance: np.ndarray
    point: np.ndarray
    normal: np.ndarray
    source: np.ndarray
    link: np.ndarray | None = None
    rest_normal: np.ndarray | None = None

    def __getitem__(self, i):
        pick = lambda a: None if a is None else a[i]
        return ClosestHit(pick(self.distance), pick(self.point), pick(self.normal),
                          pick(self.source), pick(self.link), pick(self.rest_normal))


class Scene:
    """Object plus background, either as triangles or as a point cloud.

    Mesh scenes carry one foreground flag per triangle; point-cloud scenes
    one flag per point.
    """

    def __init__(self, mesh=None, foreground=None, points=None, point_flags=None,
                 object_center=None, object_radius=None, name="scene", k_normals=16):
        self.name = name
        self.mesh = mesh
        self.points = None
        if mesh is not None:
            self.foreground = np.asarray(foreground, dtype=bool)
            if len(self.foreground) != len(mesh.faces):
                raise ValueError("one foreground flag per triangle is required")
            if not self.foreground.any():
                raise ValueError("scene needs at least one foreground primitive")
            fg_verts = mesh.vertices[np.unique(mesh.faces[self.foreground])]
        else:
            if points is None or len(points) == 0:
                raise ValueError("scene is empty")
            self.points = np.asarray(points, dtype=float)
            self.point_flags = np.asarray(point_flags, dtype=bool)
            if not self.point_flags.any():
                raise ValueError("scene needs at least one foreground primitive")
            self._tree = cKDTree(self.points)
            self.point_normals = _pca_normals(self.points, self._tree, k_normals)
            fg_verts = self.points[self.point_flags]
        if object_center is None:
            object_center = 0.5 * (fg_verts.min(axis=0) + fg_verts.max(axis=0))
        self.object_center = np.asarray(object_center, dtype=float)
        if object_radius is None:
            object_radius = float(np.linalg.norm(fg_verts - self.object_center, axis=1).max())
        self.object_radius = object_radius

    @classmethod
    def from_meshes(cls, object_mesh, object_pose=None, table_height=None, table_size=1.0,
                    background=(), name="scene"):
        obj = object_mesh if object_pose is None else object_mesh.transformed(object_pose)
        parts, flags = [obj], [np.ones(len(obj.faces), dtype=bool)]
        if table_height is not None:
            c = obj.vertices.mean(axis=0)
            table = plane_mesh(table_size, table_height, (c[0], c[1]))
            parts.append(table)
            flags.append(np.zeros(len(table.faces), dtype=bool))
        for m in background:
            parts.append(m)
            flags.append(np.zeros(len(m.faces), dtype=bool))
        fg = obj.vertices
        center = 0.5 * (fg.min(axis=0) + fg.max(axis=0))
        return cls(mesh=merge_meshes(parts), foreground=np.concatenate(flags),
                   object_center=center, name=name)

    @classmethod
    def from_points(cls, points, flags, **kw):
        return cls(points=points, point_flags=flags, **kw)

    @property
    def is_point_cloud(self):
        return self.points is not None

    def object_mesh(self):
        """Foreground triangles as their own mesh (cached)."""
        if self.mesh is None:
            return None
        if getattr(self, "_object_mesh", None) is None:
            self._object_mesh = TriMesh(self.mesh.vertices, self.mesh.faces[self.foreground])
        return self._object_mesh

    def transformed(self, T):
        if self.mesh is not None:
            return Scene(mesh=self.mesh.transformed(T), foreground=self.foreground,
                         object_center=transform_points(T, self.object_center[None])[0],
                         object_radius=self.object_radius, name=self.name)
        return Scene(points=transform_points(T, self.points), point_flags=self.point_flags,
                     object_center=transform_points(T, self.object_center[None])[0],
                     object_radius=self.object_radius, name=self.name)

    def closest(self, points):
        P = np.atleast_2d(np.asarray(points, dtype=float))
        if self.mesh is not None:
            d, cp, face = self.mesh.closest(P)
            return ClosestHit(d, cp, self.mesh.face_normals[face], self.foreground[face])
        d, idx = self._tree.query(P)
        n = self.point_normals[idx]
        # point-cloud normals are unoriented; face them toward the query
        flip = np.einsum("ij,ij->i", P - self.points[idx], n) < 0
        n = np.where(flip[:, None], -n, n)
        return ClosestHit(d, self.points[idx].copy(), n, self.point_flags[idx])


def _pca_normals(points, tree, k):
    k = min(k, len(points))
    if k < 3:
        return np.tile([0.0, 0.0, 1.0], (len(points), 1))
    _, nb = tree.query(points, k=k)
    nbh = points[nb] - points[nb].mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", nbh, nbh)
    _, vecs = np.linalg.eigh(cov)
    return vecs[:, :, 0]


def closest_point_scene(scene, p):
    hit = scene.closest(p)
    return hit[0] if np.ndim(p) == 1 else hit


class PosedGripper:
    """A gripper frozen at ``(q, base)`` for repeated distance queries."""

    def __init__(self, model, q, base=None):
        from ..model import BasePose, forward_kinematics

        self.model = model
        self.q = np.asarray(q, dtype=float)
        self.base = BasePose() if base is None else base
        self.frames = forward_kinematics(model, self.q, self.base)
        self.mesh_links = [i for i, l in enumerate(model.links) if l.mesh is not None]
        if not self.mesh_links:
            raise ValueError("gripper has no link geometry")

    @property
    def palm_center(self):
        return (self.frames[self.model.root] @ self.model.palm_frame)[:3, 3]

    def palm_transform(self):
        return self.frames[self.model.root] @ self.model.palm_frame

    def closest(self, points, links=None):
        P = np.atleast_2d(np.asarray(points, dtype=float))
        n = len(P)
        best = np.full(n, np.inf)
        cp = np.zeros((n, 3))
        nrm = np.zeros((n, 3))
        rest = np.zeros((n, 3))
        lidx = np.full(n, -1, dtype=np.int64)
        rest_frames = self.model.rest_frames
        for li in (self.mesh_links if links is None else links):
            mesh = self.model.links[li].mesh
            T = self.frames[li]
            R, t = T[:3, :3], T[:3, 3]
            d, c, f = mesh.closest((P - t) @ R)
            better = d < best
            if not better.any():
                continue
            best[better] = d[better]
            cp[better] = c[better] @ R.T + t
            ln = mesh.face_normals[f[better]]
            nrm[better] = ln @ R.T
            rest[better] = ln @ rest_frames[li][:3, :3].T
            lidx[better] = li
        comp = self.model.link_component[lidx]
        return ClosestHit(best, cp, nrm, comp, lidx, rest)


def closest_point_gripper(model, q, base, p):
    hit = PosedGripper(model, q, base).closest(p)
    return hit[0] if np.ndim(p) == 1 else hit


def load_scene(spec, base_dir=None):
    """Build a :class:`Scene` from a YAML document.

    Mesh scenes name an ``object`` mesh (with optional ``pose``), an optional
    ``table`` and optional ``background`` meshes; point-cloud scenes name a
    ``cloud`` PLY file with an x/y/z/flag vertex layout.
    """
    from pathlib import Path

    import yaml

    from .mesh import load_obj
    from .ply import read_cloud
    from ..rotations import make_transform, rpy_matrix

    if isinstance(spec, (str, Path)):
        path = Path(spec)
        with open(path) as fh:
            doc = yaml.safe_load(fh)
        base_dir = path.parent if base_dir is None else Path(base_dir)
    else:
        doc, base_dir = spec, Path(base_dir or ".")
    name = doc.get("name", Path(str(spec)).stem if not isinstance(spec, dict) else "scene")
    if "cloud" in doc:
        pts, flags = read_cloud(base_dir / doc["cloud"])
        return Scene.from_points(pts, flags, name=name)

    def pose(d):
        d = d or {}
        return make_transform(rpy_matrix(d.get("rpy", [0, 0, 0])), d.get("xyz", [0, 0, 0]))

    obj = doc["object"]
    mesh = load_obj(base_dir / obj["mesh"], scale=float(obj.get("scale", 1.0)))
    table = doc.get("table")
    background = [load_obj(base_dir / b["mesh"]).transformed(pose(b.get("pose")))
                  for b in doc.get("background", [])]
    return Scene.from_meshes(
        mesh, pose(obj.get("pose")),
        table_height=None if table is None else float(table.get("height", 0.0)),
        table_size=1.0 if table is None else float(table.get("size", 1.0)),
        background=background, name=name)
