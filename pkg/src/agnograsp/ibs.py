"""Sampled interaction bisector surface (IBS) between a gripper and a scene,
plus the object- and gripper-contact-map alternatives.

The IBS is approximated by voxel seeding around the palm, a sign-change
filter on ``d_scene - d_gripper``, and fixed-point refinement of each seed
toward the equidistant surface.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import maximum_filter

from .geom.sampling import farthest_point_sampling
from .geom.scene import PosedGripper
from .rotations import invert_transform, transform_points


class NoIBSInRange(RuntimeError):
    """No equidistant cells inside the sampling sphere."""


@dataclass
class IbsParams:
    sphere_radius: float = 0.18
    voxel_resolution: int = 20
    threshold: float | None = None  # None: half the voxel diagonal
    refine_iters: int = 10
    refine_tol: float = 1e-4
    n_points: int = 4096
    seed: int = 0

    def __post_init__(self):
        if self.voxel_resolution < 2:
            raise ValueError("voxel_resolution must be at least 2")
        if self.n_points < 1:
            raise ValueError("n_points must be at least 1")
        if self.threshold is not None and self.threshold <= 0:
            raise ValueError("threshold must be positive")

    @property
    def cell(self):
        return 2.0 * self.sphere_radius / self.voxel_resolution

    @property
    def tau(self):
        return self.threshold if self.threshold is not None else np.sqrt(3.0) * self.cell / 2.0

    @property
    def accept_tol(self):
        """Largest ``|d_s - d_g|`` a refined point may keep."""
        return max(self.tau / 10.0, 1e-3)

    def to_dict(self):
        return {"sphere_radius": self.sphere_radius, "voxel_resolution": self.voxel_resolution,
                "threshold": self.tau, "refine_iters": self.refine_iters,
                "refine_tol": self.refine_tol, "n_points": self.n_points, "seed": self.seed}


@dataclass
class IbsPoint:
    c: np.ndarray
    d_s: float
    d_g: float
    b_s: int
    c_g: np.ndarray
    a_g: float

    def vector(self):
        return np.concatenate([self.c, [self.d_s, self.d_g, self.b_s], self.c_g, [self.a_g]])


@dataclass
class FeatureCloud:
    """Per-point features of a sampled cloud; all arrays share length n.

    ``coords`` are expressed in ``frame`` (a world transform): the palm frame
    for IBS, the object frame for OCM, the gripper root for GCM.
    """

    kind: str
    coords: np.ndarray
    component: np.ndarray
    n_components: int
    d_s: np.ndarray | None = None
    d_g: np.ndarray | None = None
    b_s: np.ndarray | None = None
    a_g: np.ndarray | None = None
    world: np.ndarray | None = None
    frame: np.ndarray = field(default_factory=lambda: np.eye(4))
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.coords)

    def onehot(self):
        return np.eye(self.n_components)[self.component]

    def features(self):
        """Dense per-point feature matrix in the canonical column order."""
        if self.kind == "ibs":
            cols = [self.coords, self.d_s[:, None], self.d_g[:, None], self.b_s[:, None],
                    self.onehot(), self.a_g[:, None]]
        elif self.kind == "ocm":
            cols = [self.coords, self.d_g[:, None], self.b_s[:, None], self.onehot()]
        else:
            cols = [self.coords, self.d_s[:, None], self.b_s[:, None], self.onehot()]
        return np.concatenate(cols, axis=1).astype(float)

    def point(self, i):
        return IbsPoint(self.coords[i], float(self.d_s[i]), float(self.d_g[i]), int(self.b_s[i]),
                        self.onehot()[i], float(self.a_g[i]))


IbsFeatureCloud = FeatureCloud


def _queries(scene, gripper, P):
    hs = scene.closest(P)
    hg = gripper.closest(P)
    return hs, hg


def refine_points(scene, gripper, P, iters=10, tol=1e-4):
    """Move points toward the equidistant surface.

    Each step moves a point by half the distance mismatch along the direction
    from its closest scene point to its closest gripper point. Points whose
    mismatch is already below ``tol`` stop moving.
    """
    P = np.array(P, dtype=float)
    active = np.ones(len(P), dtype=bool)
    for _ in range(iters):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        hs, hg = _queries(scene, gripper, P[idx])
        diff = hg.distance - hs.distance
        u = hg.point - hs.point
        nu = np.linalg.norm(u, axis=1)
        done = (np.abs(diff) < tol) | (nu < 1e-12)
        move = ~done
        P[idx[move]] += 0.5 * diff[move, None] * u[move] / nu[move, None]
        active[idx[done]] = False
    return P


def _seed_cells(scene, gripper, palm_T, params):
    v, r, cell = params.voxel_resolution, params.sphere_radius, params.cell
    ax = -r + (np.arange(v) + 0.5) * cell
    g = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1).reshape(-1, 3)
    world = transform_points(palm_T, g)
    hs, hg = _queries(scene, gripper, world)
    f = (hs.distance - hg.distance).reshape(v, v, v)
    fp = maximum_filter((f > 0).astype(np.uint8), size=3, mode="constant")
    fn = maximum_filter((f < 0).astype(np.uint8), size=3, mode="constant")
    change = (((f >= 0) & (fn > 0)) | ((f <= 0) & (fp > 0))).ravel()
    inside = np.linalg.norm(g, axis=1) <= r
    keep = inside & change & (np.abs(f.ravel()) < params.tau)
    return world[keep]


def _accept(scene, gripper, palm_T, P, params):
    hs, hg = _queries(scene, gripper, P)
    local = transform_points(invert_transform(palm_T), P)
    ok = (np.abs(hs.distance - hg.distance) <= params.accept_tol)
    ok &= np.linalg.norm(local, axis=1) <= params.sphere_radius
    return ok


def sample_ibs(scene, model, q, base=None, params=None):
    """Sampled IBS feature cloud with exactly ``params.n_points`` points."""
    params = IbsParams() if params is None else params
    gripper = PosedGripper(model, q, base)
    palm_T = gripper.palm_transform()

    seeds = _seed_cells(scene, gripper, palm_T, params)
    if len(seeds) == 0:
        raise NoIBSInRange("no IBS in range")
    P = refine_points(scene, gripper, seeds, params.refine_iters, params.refine_tol)
    P = P[_accept(scene, gripper, palm_T, P, params)]
    if len(P) == 0:
        raise NoIBSInRange("no IBS in range")

    rng = np.random.default_rng(params.seed)
    n = params.n_points
    if len(P) > n:
        P = P[farthest_point_sampling(P, n, seed=params.seed)]
    elif len(P) < n:
        extra = P[rng.integers(len(P), size=n - len(P))]
        jit = extra + rng.normal(scale=params.cell / 10.0, size=extra.shape)
        jit = refine_points(scene, gripper, jit, params.refine_iters, params.refine_tol)
        ok = _accept(scene, gripper, palm_T, jit, params)
        # padded points that wander off the surface fall back to exact copies
        jit[~ok] = extra[~ok]
        P = np.concatenate([P, jit])

    cloud = featurize(scene, gripper, P, palm_T)
    cloud.provenance = {
        "gripper": model.name, "scene": getattr(scene, "name", "scene"),
        "q": np.asarray(q, dtype=float).tolist(),
        "base": gripper.base.to_dict(), "params": params.to_dict(), "seeds": int(len(seeds)),
    }
    return cloud


def featurize(scene, gripper, P, palm_T=None):
    """IBS features for world points ``P`` against a posed gripper."""
    model = gripper.model
    palm_T = gripper.palm_transform() if palm_T is None else palm_T
    hs, hg = _queries(scene, gripper, P)
    a_g = np.clip(hg.rest_normal @ model.d_up, -1.0, 1.0)
    return FeatureCloud(
        kind="ibs",
        coords=transform_points(invert_transform(palm_T), P),
        component=hg.source.astype(np.int64),
        n_components=model.n_components,
        d_s=hs.distance, d_g=hg.distance,
        b_s=hs.source.astype(np.int64), a_g=a_g,
        world=np.asarray(P, dtype=float), frame=palm_T,
    )


def featurize_point(scene, gripper, p):
    return featurize(scene, gripper, np.asarray(p, dtype=float)[None]).point(0)


def _scene_surface_samples(scene, n, center, radius, rng):
    if scene.is_point_cloud:
        near = np.linalg.norm(scene.points - center, axis=1) <= radius
        idx = np.flatnonzero(near)
        pick = rng.choice(idx, size=n, replace=len(idx) < n)
        return scene.points[pick]
    mesh = scene.mesh
    tri = mesh.triangles
    near = np.linalg.norm(tri.mean(axis=1) - center, axis=1) <= radius
    near |= scene.foreground
    from .geom.mesh import TriMesh

    sub = TriMesh(mesh.vertices, mesh.faces[near])
    return sub.sample_surface(n, rng)[0]


def extract_ocm(scene, model, q, base=None, n=4096, seed=0, radius=None):
    """Object contact map: scene-surface samples around the object."""
    gripper = PosedGripper(model, q, base)
    rng = np.random.default_rng(seed)
    radius = 1.5 * scene.object_radius if radius is None else radius
    P = _scene_surface_samples(scene, n, scene.object_center, radius, rng)
    hs, hg = _queries(scene, gripper, P)
    T = np.eye(4)
    T[:3, 3] = scene.object_center
    return FeatureCloud(
        kind="ocm", coords=P - scene.object_center, component=hg.source.astype(np.int64),
        n_components=model.n_components, d_g=hg.distance, b_s=hs.source.astype(np.int64),
        world=P, frame=T,
        provenance={"gripper": model.name, "scene": scene.name, "seed": seed},
    )


def extract_gcm(scene, model, q, base=None, n=4096, seed=0):
    """Gripper contact map: samples on the posed gripper surface."""
    gripper = PosedGripper(model, q, base)
    rng = np.random.default_rng(seed)
    links = gripper.mesh_links
    areas = np.array([model.links[i].mesh.areas.sum() for i in links])
    counts = rng.multinomial(n, areas / areas.sum())
    P, comp = [], []
    for li, c in zip(links, counts):
        pts, _ = model.links[li].mesh.sample_surface(int(c), rng)
        P.append(transform_points(gripper.frames[li], pts))
        comp.append(np.full(int(c), model.link_component[li]))
    P = np.concatenate(P)
    comp = np.concatenate(comp)
    hs = scene.closest(P)
    root_T = gripper.frames[model.root]
    return FeatureCloud(
        kind="gcm", coords=transform_points(invert_transform(root_T), P), component=comp,
        n_components=model.n_components, d_s=hs.distance, b_s=hs.source.astype(np.int64),
        world=P, frame=root_T,
        provenance={"gripper": model.name, "scene": scene.name, "seed": seed},
    )


def write_ibs_ply(path, cloud):
    from .geom.ply import write_ply

    write_ply(path, {
        "x": cloud.coords[:, 0].astype("<f4"), "y": cloud.coords[:, 1].astype("<f4"),
        "z": cloud.coords[:, 2].astype("<f4"),
        "d_s": cloud.d_s.astype("<f4"), "d_g": cloud.d_g.astype("<f4"),
        "a_g": cloud.a_g.astype("<f4"),
        "b_s": cloud.b_s.astype("u1"), "component": cloud.component.astype("u1"),
    })
