"""Gripper description, forward kinematics and semantic keypoints.

A gripper is a kinematic tree of links connected by revolute, prismatic or
fixed joints. Joint ``origin`` is the child frame at zero joint value
expressed in the parent link frame and ``axis`` is given in that joint frame
(the URDF convention). The gripper-local frame used for keypoints is the
root link frame.
"""

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .geom.hull import convex_hull
from .geom.mesh import TriMesh, load_obj
from .rotations import (
    canonical_rotvec,
    make_transform,
    rotvec_to_matrix,
    rpy_matrix,
    axis_angle_matrix,
)

JOINT_TYPES = ("revolute", "prismatic", "fixed")
UNIT_SCALE = {"m": 1.0, "mm": 1e-3, "cm": 1e-2}


class GripperSpecError(ValueError):
    """Raised when a gripper document does not describe a valid gripper."""


@dataclass
class Link:
    name: str
    parent_joint: int = -1
    mesh: TriMesh | None = None
    hull: object = None


@dataclass
class Joint:
    name: str
    type: str
    parent: int
    child: int
    origin: np.ndarray
    axis: np.ndarray
    lower: float = 0.0
    upper: float = 0.0
    actuated: bool = True
    q_index: int = -1


@dataclass(frozen=True)
class Attachment:
    link: int
    offset: np.ndarray


@dataclass(frozen=True)
class BasePose:
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3))

    @classmethod
    def from_matrix(cls, T):
        from .rotations import matrix_to_rotvec

        return cls(T[:3, 3].copy(), matrix_to_rotvec(T[:3, :3]))

    def matrix(self):
        return make_transform(rotvec_to_matrix(self.rotation), self.translation)

    def canonical(self):
        return BasePose(self.translation, canonical_rotvec(self.rotation))

    def to_dict(self):
        return {"translation": self.translation.tolist(), "rotation": self.rotation.tolist()}


@dataclass(frozen=True)
class KeypointState:
    """Semantic keypoints: base rotation ``r``, palm root ``p0`` and per-finger
    (middle, tip) points in the gripper-local frame, shape (K, 2, 3)."""

    r: np.ndarray
    p0: np.ndarray
    fingers: np.ndarray

    @property
    def n_fingers(self):
        return len(self.fingers)

    def vector(self):
        return np.concatenate([self.r, self.p0, self.fingers.reshape(-1)])

    def local_points(self):
        """Keypoints without the rotation, ``s_key'``."""
        return np.concatenate([self.p0, self.fingers.reshape(-1)])


class GripperModel:
    def __init__(self, links, joints, fingers, palm_keypoint, finger_keypoints,
                 palm_frame=None, d_up=(0.0, 0.0, 1.0), name="gripper"):
        self.name = name
        self.links = list(links)
        self.joints = list(joints)
        self.fingers = [list(f) for f in fingers]
        self.palm_keypoint = palm_keypoint
        self.finger_keypoints = [tuple(k) for k in finger_keypoints]
        self.palm_frame = np.eye(4) if palm_frame is None else np.asarray(palm_frame, dtype=float)
        d_up = np.asarray(d_up, dtype=float)
        self.d_up = d_up / np.linalg.norm(d_up)
        self._validate_and_index()

    # ------------------------------------------------------------------ setup
    def _validate_and_index(self):
        L = len(self.links)
        names = [l.name for l in self.links]
        if len(set(names)) != L:
            raise GripperSpecError("duplicate link names")
        child_of = {}
        for j_idx, j in enumerate(self.joints):
            if j.type not in JOINT_TYPES:
                raise GripperSpecError(f"joint {j.name}: unknown type {j.type!r}")
            if not (0 <= j.parent < L and 0 <= j.child < L):
                raise GripperSpecError(f"joint {j.name}: unknown link")
            if j.child in child_of:
                raise GripperSpecError(f"link {self.links[j.child].name} has two parent joints")
            if j.lower > j.upper:
                raise GripperSpecError(f"joint {j.name}: invalid limits")
            n = np.linalg.norm(j.axis)
            if j.type != "fixed":
                if n == 0:
                    raise GripperSpecError(f"joint {j.name}: zero axis")
                j.axis = np.asarray(j.axis, dtype=float) / n
            child_of[j.child] = j_idx
        roots = [i for i in range(L) if i not in child_of]
        if len(roots) != 1:
            raise GripperSpecError("disconnected kinematic tree")
        self.root = roots[0]

        # breadth-first joint order so every parent frame is ready first
        order, seen = [], {self.root}
        queue = deque([self.root])
        while queue:
            link = queue.popleft()
            for j_idx, j in enumerate(self.joints):
                if j.parent == link:
                    if j.child in seen:
                        raise GripperSpecError("disconnected kinematic tree")
                    seen.add(j.child)
                    order.append(j_idx)
                    queue.append(j.child)
        if len(seen) != L:
            raise GripperSpecError("disconnected kinematic tree")
        self.joint_order = order

        for i, link in enumerate(self.links):
            link.parent_joint = child_of.get(i, -1)

        q = 0
        for j_idx in order:
            j = self.joints[j_idx]
            if j.type != "fixed" and j.actuated:
                j.q_index = q
                q += 1
            else:
                j.q_index = -1
        self.dof = q
        self.actuated_joints = sorted(
            (j for j in self.joints if j.q_index >= 0), key=lambda j: j.q_index)
        self.lower = np.array([j.lower for j in self.actuated_joints])
        self.upper = np.array([j.upper for j in self.actuated_joints])
        self.joint_names = [j.name for j in self.actuated_joints]

        # link ancestry: which joints move each link
        self.parent_link = np.full(L, -1)
        for j in self.joints:
            self.parent_link[j.child] = j.parent
        anc = np.zeros((L, len(self.joints)), dtype=bool)
        for j_idx in order:
            j = self.joints[j_idx]
            anc[j.child] = anc[j.parent]
            anc[j.child, j_idx] = True
        self.joint_ancestors = anc
        act = np.zeros((L, self.dof), dtype=bool)
        for j in self.actuated_joints:
            act[:, j.q_index] = anc[:, self.joints.index(j)]
        self.dof_ancestors = act

        for k, chain in enumerate(self.fingers):
            if not chain:
                raise GripperSpecError(f"finger {k} is empty")
            for a, b in zip(chain[:-1], chain[1:]):
                if not self.is_ancestor(a, b):
                    raise GripperSpecError(f"finger {k}: chain is not connected")
        if len(self.finger_keypoints) != len(self.fingers):
            raise GripperSpecError("one (middle, tip) keypoint pair per finger is required")
        for att in [self.palm_keypoint] + [a for pair in self.finger_keypoints for a in pair]:
            if not 0 <= att.link < L:
                raise GripperSpecError("keypoint references unknown link")
        if self.dof_ancestors[self.palm_keypoint.link].any():
            raise GripperSpecError("palm keypoint must not move with actuated joints")

        comp = np.zeros(L, dtype=np.int64)
        for link in range(L):
            for k, chain in enumerate(self.fingers):
                if any(c == link or self.is_ancestor(c, link) for c in chain):
                    comp[link] = k + 1
                    break
        self.link_component = comp
        self.rest_frames = self.link_frames(np.zeros(self.dof))

    def is_ancestor(self, a, b):
        """True when link ``a`` lies strictly above link ``b``."""
        p = self.parent_link[b]
        while p >= 0:
            if p == a:
                return True
            p = self.parent_link[p]
        return False

    # ------------------------------------------------------------- properties
    @property
    def n_fingers(self):
        return len(self.fingers)

    @property
    def n_links(self):
        return len(self.links)

    @property
    def n_components(self):
        return len(self.fingers) + 1

    @property
    def state_dim(self):
        return 6 * (self.n_fingers + 1)

    def link_index(self, name):
        for i, l in enumerate(self.links):
            if l.name == name:
                return i
        raise KeyError(name)

    def keypoint_attachments(self):
        """The 2K finger attachments in state order (middle, tip per finger)."""
        return [a for pair in self.finger_keypoints for a in pair]

    def clamp(self, q):
        return np.clip(q, self.lower, self.upper)

    # ------------------------------------------------------------- kinematics
    def link_frames(self, q, return_joints=False):
        """Link transforms in the root frame for ``q`` of shape (..., C).

        With ``return_joints`` also returns joint axes and origins in the root
        frame, each of shape (..., J, 3).
        """
        q = np.asarray(q, dtype=float)
        batch = q.shape[:-1]
        L, J = len(self.links), len(self.joints)
        T = np.zeros(batch + (L, 4, 4))
        T[..., self.root, :, :] = np.eye(4)
        axes = np.zeros(batch + (J, 3))
        origins = np.zeros(batch + (J, 3))
        for j_idx in self.joint_order:
            j = self.joints[j_idx]
            Tj = T[..., j.parent, :, :] @ j.origin
            if j.type == "fixed" or j.q_index < 0:
                T[..., j.child, :, :] = Tj
            else:
                val = q[..., j.q_index]
                M = np.zeros(batch + (4, 4))
                if j.type == "revolute":
                    M[..., :3, :3] = axis_angle_matrix(np.broadcast_to(j.axis, batch + (3,)), val)
                else:
                    M[..., :3, :3] = np.eye(3)
                    M[..., :3, 3] = val[..., None] * j.axis
                M[..., 3, 3] = 1.0
                T[..., j.child, :, :] = Tj @ M
            axes[..., j_idx, :] = Tj[..., :3, :3] @ j.axis
            origins[..., j_idx, :] = Tj[..., :3, 3]
        if return_joints:
            return T, axes, origins
        return T

    def point_jacobian(self, q, link, points, frames=None):
        """d(point in root frame)/dq for points rigidly attached to ``link``.

        ``points`` are given in the root frame, shape (..., n, 3); ``link`` is
        an int or an (n,) array. Returns (..., n, 3, C).
        """
        if frames is None:
            frames = self.link_frames(q, return_joints=True)
        _, axes, origins = frames
        points = np.asarray(points, dtype=float)
        link = np.broadcast_to(np.asarray(link), points.shape[-2:-1])
        Jac = np.zeros(points.shape + (self.dof,))
        for j in self.actuated_joints:
            j_idx = self.joints.index(j)
            moves = self.joint_ancestors[link, j_idx]  # (n,)
            if not moves.any():
                continue
            a = axes[..., j_idx, :][..., None, :]
            if j.type == "revolute":
                col = np.cross(a, points - origins[..., j_idx, :][..., None, :])
            else:
                col = np.broadcast_to(a, points.shape)
            Jac[..., j.q_index] = np.where(moves[:, None], col, 0.0)
        return Jac


# ---------------------------------------------------------------- loading
def _origin(doc, scale):
    doc = doc or {}
    xyz = np.asarray(doc.get("xyz", [0.0, 0.0, 0.0]), dtype=float) * scale
    rpy = doc.get("rpy", [0.0, 0.0, 0.0])
    return make_transform(rpy_matrix(rpy), xyz)


def _vec3(value, what):
    try:
        v = np.asarray(value, dtype=float).reshape(3)
    except (TypeError, ValueError) as exc:
        raise GripperSpecError(f"{what}: expected a 3-vector") from exc
    return v


def _require(doc, key, kind, where):
    if key not in doc:
        raise GripperSpecError(f"{where}: missing field {key!r}")
    if not isinstance(doc[key], kind):
        raise GripperSpecError(f"{where}: field {key!r} has the wrong type")
    return doc[key]


def load_gripper(spec, base_dir=None):
    """Build a :class:`GripperModel` from a YAML/JSON file or a parsed dict.

    Mesh paths are resolved relative to the document's directory (or
    ``base_dir`` for dict input).
    """
    if isinstance(spec, (str, Path)):
        path = Path(spec)
        with open(path) as fh:
            doc = yaml.safe_load(fh)
        base_dir = path.parent if base_dir is None else Path(base_dir)
    else:
        doc = spec
        base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
    if not isinstance(doc, dict):
        raise GripperSpecError("gripper document must be a mapping")

    units = doc.get("units", "m")
    if units not in UNIT_SCALE:
        raise GripperSpecError(f"unknown units {units!r}")
    s = UNIT_SCALE[units]

    link_docs = _require(doc, "links", list, "gripper")
    joint_docs = _require(doc, "joints", list, "gripper")
    finger_docs = _require(doc, "fingers", list, "gripper")
    kp_doc = _require(doc, "keypoints", dict, "gripper")

    links, index = [], {}
    for ld in link_docs:
        if not isinstance(ld, dict):
            raise GripperSpecError("links: entries must be mappings")
        name = _require(ld, "name", str, "link")
        mesh = None
        if ld.get("mesh") is not None:
            mesh_path = base_dir / ld["mesh"]
            mesh = load_obj(mesh_path)
            mesh = mesh.scaled(np.asarray(ld.get("mesh_scale", [1.0, 1.0, 1.0]), dtype=float) * s)
            if "mesh_origin" in ld:
                mesh = mesh.transformed(_origin(ld["mesh_origin"], s))
        index[name] = len(links)
        links.append(Link(name=name, mesh=mesh))

    def link_id(name, where):
        if name not in index:
            raise GripperSpecError(f"{where}: unknown link {name!r}")
        return index[name]

    joints = []
    for jd in joint_docs:
        if not isinstance(jd, dict):
            raise GripperSpecError("joints: entries must be mappings")
        name = _require(jd, "name", str, "joint")
        jtype = jd.get("type", "revolute")
        parent = link_id(_require(jd, "parent", str, f"joint {name}"), f"joint {name}")
        child = link_id(_require(jd, "child", str, f"joint {name}"), f"joint {name}")
        lim = jd.get("limit", [0.0, 0.0])
        if not isinstance(lim, (list, tuple)) or len(lim) != 2:
            raise GripperSpecError(f"joint {name}: limit must be [lower, upper]")
        lo, hi = float(lim[0]), float(lim[1])
        if jtype == "prismatic":
            lo, hi = lo * s, hi * s
        joints.append(Joint(
            name=name, type=jtype, parent=parent, child=child,
            origin=_origin(jd.get("origin"), s),
            axis=_vec3(jd.get("axis", [0, 0, 1]), f"joint {name} axis"),
            lower=lo, upper=hi, actuated=bool(jd.get("actuated", jtype != "fixed")),
        ))

    fingers = []
    for fd in finger_docs:
        if not isinstance(fd, list):
            raise GripperSpecError("fingers: each finger is a list of link names")
        fingers.append([link_id(n, "finger") for n in fd])

    def attachment(d, where):
        if not isinstance(d, dict):
            raise GripperSpecError(f"{where}: expected a mapping")
        return Attachment(link_id(_require(d, "link", str, where), where),
                          _vec3(d.get("offset", [0, 0, 0]), where) * s)

    palm = attachment(_require(kp_doc, "palm", dict, "keypoints"), "keypoints.palm")
    fk_docs = _require(kp_doc, "fingers", list, "keypoints")
    finger_kps = [(attachment(_require(d, "middle", dict, "keypoints"), "keypoint"),
                   attachment(_require(d, "tip", dict, "keypoints"), "keypoint"))
                  for d in fk_docs]

    model = GripperModel(
        links, joints, fingers, palm, finger_kps,
        palm_frame=_origin(doc.get("palm_frame"), s),
        d_up=_vec3(doc.get("d_up", [0, 0, 1]), "d_up"),
        name=str(doc.get("name", "gripper")),
    )
    for link in model.links:
        if link.mesh is not None:
            link.hull = convex_hull(link.mesh.vertices)
    return model


# ------------------------------------------------------------- operations
def clamp_joints(model, q):
    """Clamp ``q`` to the joint limits; returns ``(q_clamped, clamped_mask)``."""
    q = np.asarray(q, dtype=float)
    qc = model.clamp(q)
    return qc, qc != q


def forward_kinematics(model, q, base=None):
    """World transforms of every link, shape (L, 4, 4)."""
    T = model.link_frames(np.asarray(q, dtype=float))
    if base is None:
        return T
    return base.matrix() @ T


def _attachment_points(model, frames, attachments):
    if not attachments:
        return np.zeros(frames.shape[:-3] + (0, 3))
    F = frames[..., [a.link for a in attachments], :, :]
    R = F[..., :3, :3]
    t = F[..., :3, 3]
    off = np.stack([a.offset for a in attachments])
    return np.einsum("...nij,nj->...ni", R, off) + t


def keypoint_positions(model, q, frames=None):
    """The 2K finger keypoints in the gripper-local frame, shape (..., 2K, 3)."""
    if frames is None:
        frames = model.link_frames(q)
    return _attachment_points(model, frames, model.keypoint_attachments())


def palm_root(model):
    return _attachment_points(model, model.rest_frames, [model.palm_keypoint])[0]


def keypoint_state(model, q, base=None):
    base = BasePose() if base is None else base
    pts = keypoint_positions(model, q)
    return KeypointState(
        r=canonical_rotvec(base.rotation),
        p0=palm_root(model),
        fingers=pts.reshape(model.n_fingers, 2, 3),
    )


def keypoint_jacobian(model, q):
    """d(keypoint local positions)/dq, shape (3 * 2K, C)."""
    q = np.asarray(q, dtype=float)
    frames = model.link_frames(q, return_joints=True)
    atts = model.keypoint_attachments()
    pts = _attachment_points(model, frames[0], atts)
    links = np.array([a.link for a in atts], dtype=np.int64)
    J = model.point_jacobian(q, links, pts, frames=frames)
    return J.reshape(-1, model.dof)
