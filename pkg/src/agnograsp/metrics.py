"""Contacts, the Q1 grasp quality measure and collision statistics."""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull as _QHull
from scipy.spatial import QhullError

from .geom.scene import PosedGripper

CONTACT_DELTA = 0.002


@dataclass
class Contact:
    """Closest object/link pair within the contact band.

    ``normal`` points out of the object; ``distance`` is negative when the
    link penetrates the object.
    """

    point: np.ndarray
    normal: np.ndarray
    component: int
    distance: float
    link: int = -1

    def to_dict(self):
        return {"point": self.point.tolist(), "normal": self.normal.tolist(),
                "component": int(self.component), "distance": float(self.distance),
                "link": int(self.link)}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["point"], dtype=float), np.asarray(d["normal"], dtype=float),
                   int(d["component"]), float(d["distance"]), int(d.get("link", -1)))


def segment_distances(p1, q1, p2, q2):
    """Closest points between segment batches ``p1q1`` and ``p2q2``.

    Returns ``(dist, c1, c2)``.
    """
    d1, d2, r = q1 - p1, q2 - p2, p1 - p2
    a = np.einsum("ij,ij->i", d1, d1)
    e = np.einsum("ij,ij->i", d2, d2)
    f = np.einsum("ij,ij->i", d2, r)
    c = np.einsum("ij,ij->i", d1, r)
    b = np.einsum("ij,ij->i", d1, d2)
    denom = a * e - b * b
    safe_a = np.where(a > 1e-300, a, 1.0)
    safe_e = np.where(e > 1e-300, e, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(denom > 1e-18 * a * e, np.clip((b * f - c * e) / denom, 0.0, 1.0), 0.0)
    t = (b * s + f) / safe_e
    lo, hi = t < 0.0, t > 1.0
    s = np.where(lo, np.clip(-c / safe_a, 0.0, 1.0), s)
    s = np.where(hi, np.clip((b - c) / safe_a, 0.0, 1.0), s)
    t = np.clip(t, 0.0, 1.0)
    c1 = p1 + d1 * s[:, None]
    c2 = p2 + d2 * t[:, None]
    return np.linalg.norm(c1 - c2, axis=1), c1, c2


def mesh_distance(a, b):
    """Minimum distance between two triangle meshes and the closest pair.

    Uses vertex-to-triangle queries in both directions plus edge-edge pairs,
    which is exact for disjoint meshes. Returns ``(dist, pa, pb)``.
    """
    da, ca, _ = b.closest(a.vertices)
    i = int(np.argmin(da))
    best, pa, pb = float(da[i]), a.vertices[i].copy(), ca[i].copy()
    db, cb, _ = a.closest(b.vertices)
    j = int(np.argmin(db))
    if db[j] < best:
        best, pa, pb = float(db[j]), cb[j].copy(), b.vertices[j].copy()
    ea, eb = a.edges, b.edges
    # edge pairs that could beat the current best, filtered by bounding spheres
    ca_ = a.vertices.mean(axis=0)
    ra = float(np.linalg.norm(a.vertices - ca_, axis=1).max())
    mid = 0.5 * (b.vertices[eb[:, 0]] + b.vertices[eb[:, 1]])
    half = 0.5 * np.linalg.norm(b.vertices[eb[:, 0]] - b.vertices[eb[:, 1]], axis=1)
    eb = eb[np.linalg.norm(mid - ca_, axis=1) - half - ra <= best]
    if len(eb):
        ia, ib = np.meshgrid(np.arange(len(ea)), np.arange(len(eb)), indexing="ij")
        ia, ib = ia.ravel(), ib.ravel()
        d, c1, c2 = segment_distances(a.vertices[ea[ia, 0]], a.vertices[ea[ia, 1]],
                                      b.vertices[eb[ib, 0]], b.vertices[eb[ib, 1]])
        k = int(np.argmin(d))
        if d[k] < best:
            best, pa, pb = float(d[k]), c1[k], c2[k]
    return best, pa, pb


def detect_contacts(model, q, base, scene, delta=CONTACT_DELTA, gripper=None):
    """One contact per gripper link whose distance to the object is within ``delta``."""
    g = PosedGripper(model, q, base) if gripper is None else gripper
    out = []
    obj = scene.object_mesh()
    for li in g.mesh_links:
        link_mesh = model.links[li].mesh.transformed(g.frames[li])
        if obj is not None:
            d, pl, po = mesh_distance(link_mesh, obj)
            # penetration: deepest link vertex behind the object surface
            dv, cv, fv = obj.closest(link_mesh.vertices)
            side = np.einsum("ij,ij->i", link_mesh.vertices - cv, obj.face_normals[fv])
            inside = side < 0
            if inside.any():
                k = int(np.argmax(np.where(inside, dv, -np.inf)))
                d, po = -float(dv[k]), cv[k]
            _, _, f = obj.closest(po[None])
            normal = obj.face_normals[f[0]]
        else:
            fg = scene.points[scene.point_flags]
            T = g.frames[li]
            local = (fg - T[:3, 3]) @ T[:3, :3]
            dd, _, _ = model.links[li].mesh.closest(local)
            k = int(np.argmin(dd))
            d, po = float(dd[k]), fg[k]
            normal = scene.closest(po[None]).normal[0]
        if d <= delta:
            out.append(Contact(np.asarray(po, dtype=float), normal, int(model.link_component[li]),
                               float(d), li))
    return out


def finger_contacts(contacts):
    return [c for c in contacts if c.component > 0]


# ---------------------------------------------------------------------- Q1
def _tangent_basis(n):
    a = np.eye(3)[int(np.argmin(np.abs(n)))]
    t1 = a - (a @ n) * n
    t1 /= np.linalg.norm(t1)
    return t1, np.cross(n, t1)


def contact_wrenches(contacts, mu=0.5, rho=1.0, cone_edges=8, center=None, frame=None,
                     torsion=0.1):
    """Unit-normal-force wrenches of the linearised friction cones.

    Each contact contributes ``cone_edges`` edge wrenches and two torsional
    wrenches (pure normal force with a ``±torsion * rho`` spin moment about
    the normal). Everything is expressed in the object frame ``frame``
    (rotation, default identity) about ``center``; torques are divided by
    ``rho``.
    """
    R = np.eye(3) if frame is None else np.asarray(frame, dtype=float)[:3, :3]
    c = np.zeros(3) if center is None else np.asarray(center, dtype=float)
    th = 2.0 * np.pi * np.arange(cone_edges) / cone_edges
    W = []
    for ct in contacts:
        p = R.T @ (np.asarray(ct.point, dtype=float) - c)
        n = R.T @ np.asarray(ct.normal, dtype=float)
        n /= np.linalg.norm(n)
        # force on the object points into it
        f_n = -n
        t1, t2 = _tangent_basis(f_n)
        for k in range(cone_edges):
            f = f_n + mu * (np.cos(th[k]) * t1 + np.sin(th[k]) * t2)
            W.append(np.concatenate([f, np.cross(p, f) / rho]))
        for s in (-1.0, 1.0):
            W.append(np.concatenate([f_n, np.cross(p, f_n) / rho + s * torsion * f_n]))
    return np.array(W).reshape(-1, 6)


def q1(contacts, mu=0.5, rho=1.0, cone_edges=8, center=None, frame=None, torsion=0.1):
    """Largest origin-centred ball inside the contact wrench hull; 0 when the
    origin is not strictly inside or there are fewer than two contacts."""
    if len(contacts) < 2:
        return 0.0
    W = contact_wrenches(contacts, mu, rho, cone_edges, center, frame, torsion)
    if np.linalg.matrix_rank(W, tol=1e-10) < 6:
        return 0.0
    try:
        hull = _QHull(W)
    except QhullError:
        return 0.0
    off = hull.equations[:, 6]
    if np.any(off >= -1e-12):
        return 0.0
    return float(np.min(-off))


# ------------------------------------------------------------- collisions
def collision_stats(trajectory, model, ctx):
    """Percentage of frames in self-collision and mean loss on those frames.

    ``trajectory`` is a sequence of joint vectors or of frames with a ``q``
    entry.
    """
    from .adapt import self_collision_terms

    qs = [np.asarray(f["q"] if isinstance(f, dict) else f, dtype=float) for f in trajectory]
    if not qs:
        return 0.0, 0.0
    losses, _ = self_collision_terms(model, ctx, np.stack(qs), return_grad=False)
    hit = losses > 0
    pct = 100.0 * hit.mean()
    return float(pct), float(losses[hit].mean()) if hit.any() else 0.0
