"""The gripper-agnostic policy: component tokens, transformer fusion and
action heads, plus a kinematic rollout loop.

Each component (palm, then one per finger with the thumb first) contributes
a keypoint token and a local IBS token; one global IBS token summarises the
whole cloud. Finger encoders and heads are shared, so one parameter set
serves grippers with any finger count.
"""

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .ibs import FeatureCloud, IbsParams, NoIBSInRange, sample_ibs
from .model import BasePose, clamp_joints, keypoint_state
from .rotations import matrix_to_rotvec, rotvec_to_matrix

POINT_FEATURES = 10  # c (3), d_s, d_g, b_s, role (3), a_g
KEYPOINT_GROUP = 9
STEP_CAP = 0.01
ROT_CAP = np.deg2rad(5.0)


@dataclass
class Action:
    """Per-finger local displacements (K, 2, 3), world base motion, stop value."""

    finger: np.ndarray
    dp: np.ndarray
    dr: np.ndarray
    a_s: float

    @property
    def n_fingers(self):
        return len(self.finger)

    def vector(self):
        return np.concatenate([self.finger.ravel(), self.dp, self.dr, [self.a_s]])

    def capped(self, step_cap=STEP_CAP, rot_cap=ROT_CAP):
        """Copy with every keypoint and base step clipped to the caps."""
        def clip(v, cap):
            n = np.linalg.norm(v, axis=-1, keepdims=True)
            return v * np.minimum(1.0, cap / np.maximum(n, 1e-300))

        return Action(clip(self.finger, step_cap), clip(self.dp, step_cap),
                      clip(self.dr, rot_cap), self.a_s)

    def to_dict(self):
        return {"finger": self.finger.tolist(), "dp": self.dp.tolist(), "dr": self.dr.tolist(),
                "a_s": float(self.a_s)}


@dataclass
class PolicyNet:
    store: nn.ParamStore
    d: int = 128
    heads: int = 4
    layers: int = 4
    point_widths: tuple = (64, 128)
    out_scale: float = STEP_CAP

    def to_meta(self):
        return {"kind": "policy", "d": self.d, "heads": self.heads, "layers": self.layers,
                "point_widths": list(self.point_widths), "out_scale": self.out_scale}

    def save(self, path):
        nn.save_params(self.store, path, meta=self.to_meta())

    @classmethod
    def load(cls, path):
        store, meta = nn.load_params(path)
        if meta.get("kind") != "policy":
            raise ValueError(f"{path}: not a policy checkpoint")
        return cls(store, meta["d"], meta["heads"], meta["layers"],
                   tuple(meta["point_widths"]), meta["out_scale"])


def init_policy(d=128, heads=4, layers=4, point_widths=(64, 128), seed=0):
    rng = np.random.default_rng(seed)
    s = nn.ParamStore()
    nn.init_mlp(s, "kp.palm", [KEYPOINT_GROUP, 64, d], rng)
    nn.init_mlp(s, "kp.finger", [KEYPOINT_GROUP, 64, d], rng)
    s.add("kp.thumb_role", rng.normal(scale=0.1, size=d))
    for name in ("ibs.palm", "ibs.finger", "ibs.global"):
        nn.init_mlp(s, name, [POINT_FEATURES, *point_widths], rng)
        nn.init_mlp(s, name + ".proj", [point_widths[-1], d], rng)
    s.add("ibs.empty_palm", rng.normal(scale=0.1, size=d))
    s.add("ibs.empty_finger", rng.normal(scale=0.1, size=d))
    for i in range(layers):
        nn.init_attention(s, f"enc{i}", d, heads, 2 * d, rng)
    nn.init_mlp(s, "head.finger", [2 * d, d, 6], rng)
    nn.init_mlp(s, "head.global", [2 * d, d, 7], rng)
    return PolicyNet(s, d, heads, layers, tuple(point_widths))


# ---------------------------------------------------------------- tokens
def keypoint_groups(keypoints):
    """Per-component 9-D keypoint vectors: the palm root with the rotation
    (zero-padded), then (middle, tip, rotation) per finger."""
    r = np.asarray(keypoints.r, dtype=float)
    palm = np.concatenate([keypoints.p0, r, np.zeros(3)])
    fingers = [np.concatenate([f[0], f[1], r]) for f in keypoints.fingers]
    return np.stack([palm] + fingers)


def ibs_point_inputs(cloud):
    """Per-point network inputs; the component one-hot is folded into a role
    code (palm, thumb, other finger) so the width is independent of K."""
    role = np.zeros((len(cloud), 3))
    comp = cloud.component
    role[comp == 0, 0] = 1.0
    role[comp == 1, 1] = 1.0
    role[comp >= 2, 2] = 1.0
    return np.concatenate([cloud.coords, cloud.d_s[:, None], cloud.d_g[:, None],
                           cloud.b_s[:, None].astype(float), role, cloud.a_g[:, None]], axis=1)


@dataclass
class Tokens:
    matrix: nn.Tensor
    n_fingers: int

    @property
    def n_components(self):
        return self.n_fingers + 1

    def __len__(self):
        return self.matrix.shape[0]


def _encode_set(net, name, pts):
    pooled = nn.pointset_encode(net.store, name, pts)
    return nn.mlp_forward(net.store, name + ".proj", nn.reshape(pooled, (1, -1)))


def encode_tokens(net, keypoints, cloud):
    """Token matrix of shape (2(K+1)+1, d): K+1 keypoint tokens, K+1 local
    IBS tokens and the global IBS token, in that order."""
    K = keypoints.n_fingers
    if cloud.n_components != K + 1:
        raise ValueError(f"IBS cloud has {cloud.n_components} components, gripper has {K + 1}")
    s = net.store
    groups = keypoint_groups(keypoints)
    kp = [nn.mlp_forward(s, "kp.palm", groups[:1])]
    if K:
        fk = nn.mlp_forward(s, "kp.finger", groups[1:])
        role = np.zeros((K, 1))
        role[0] = 1.0
        kp.append(fk + nn.Tensor(role) * nn.reshape(s["kp.thumb_role"], (1, -1)))
    X = ibs_point_inputs(cloud) if len(cloud) else np.zeros((0, POINT_FEATURES))
    local = []
    for c in range(K + 1):
        kind = "palm" if c == 0 else "finger"
        pts = X[cloud.component == c] if len(cloud) else X
        if len(pts) == 0:
            local.append(nn.reshape(s[f"ibs.empty_{kind}"], (1, -1)))
        else:
            local.append(_encode_set(net, f"ibs.{kind}", pts))
    if len(X):
        glob = _encode_set(net, "ibs.global", X)
    else:
        glob = nn.reshape(s["ibs.empty_palm"], (1, -1))
    return Tokens(nn.concat(kp + local + [glob], axis=0), K)


def policy_forward(net, tokens, tensor=False):
    """Action from tokens. With ``tensor`` returns the raw output tensors
    ``(finger (K, 6), global (7,))`` for training instead."""
    K = tokens.n_fingers
    if len(tokens) != 2 * (K + 1) + 1:
        raise ValueError(f"token count {len(tokens)} does not match K = {K}")
    s = net.store
    x = tokens.matrix
    for i in range(net.layers):
        x = nn.self_attention_layer(s, f"enc{i}", x, net.heads)
    kp = x[: K + 1]
    ib = x[K + 1: 2 * (K + 1)]
    fin = None
    if K:
        fin = nn.mlp_forward(s, "head.finger", nn.concat([kp[1:], ib[1:]], axis=1))
    pooled = nn.concat([nn.tmax(kp, axis=0), nn.tmax(x[K + 1:], axis=0)], axis=0)
    glob = nn.mlp_forward(s, "head.global", nn.reshape(pooled, (1, -1)))
    if tensor:
        return fin, glob
    g = glob.data[0]
    f = fin.data.reshape(K, 2, 3) if K else np.zeros((0, 2, 3))
    sc = net.out_scale
    return Action(f * sc, g[:3] * sc, g[3:6] * ROT_CAP, float(g[6]))


def decide_stop(a_s, contact_count):
    return bool(a_s > 0.0 and contact_count > 2)


# --------------------------------------------------------------- adapters
class LearnedAdapter:
    name = "LB-IK+SC"

    def __init__(self, net):
        self.net = net

    def __call__(self, model, q, kp, dp):
        from .adapt import adapt_forward

        return adapt_forward(self.net, q, kp, dp)


class ObIkAdapter:
    name = "OB-IK"

    def __init__(self, iters=100, step=0.5):
        self.iters, self.step = iters, step

    def __call__(self, model, q, kp, dp):
        from .adapt import ob_ik_solve

        return ob_ik_solve(model, q, dp, self.iters, self.step)


class ObIkScAdapter:
    name = "OB-IK+SC"

    def __init__(self, ctx, iters=100, step=0.5):
        self.ctx, self.iters, self.step = ctx, iters, step

    def __call__(self, model, q, kp, dp):
        from .adapt import ob_ik_sc_solve

        return ob_ik_sc_solve(model, q, dp, self.ctx, self.iters, self.step)


# ---------------------------------------------------------------- rollout
def empty_cloud(model):
    z = np.zeros(0)
    return FeatureCloud("ibs", np.zeros((0, 3)), np.zeros(0, dtype=np.int64), model.n_components,
                        z, z, np.zeros(0, dtype=np.int64), z)


@dataclass
class Trajectory:
    gripper: str
    scene: str
    frames: list = field(default_factory=list)
    stopped: bool = False

    def to_jsonl(self):
        return "".join(json.dumps(f, sort_keys=True) + "\n" for f in self.frames)


def step_base(base, action):
    R = rotvec_to_matrix(action.dr) @ rotvec_to_matrix(base.rotation)
    return BasePose(base.translation + action.dp, matrix_to_rotvec(R))


def run_episode(net, adapter, model, scene, base, q0=None, steps=20, ibs_params=None,
                ctx=None, clock=time.perf_counter):
    """Kinematic rollout: features, policy, adaptation, clamp, base step.

    Stops on :func:`decide_stop` or after ``steps`` frames. The object never
    moves. Each frame records q, base, action, contacts and stage timings in
    milliseconds.
    """
    from .adapt import self_collision_loss
    from .metrics import detect_contacts, finger_contacts

    params = IbsParams() if ibs_params is None else ibs_params
    q = np.zeros(model.dof) if q0 is None else np.asarray(q0, dtype=float)
    q = clamp_joints(model, q)[0]
    traj = Trajectory(model.name, getattr(scene, "name", "scene"))
    for t in range(steps):
        t0 = clock()
        try:
            cloud = sample_ibs(scene, model, q, base, params)
        except NoIBSInRange:
            cloud = empty_cloud(model)
        t1 = clock()
        ks = keypoint_state(model, q, base)
        action = policy_forward(net, encode_tokens(net, ks, cloud)).capped()
        t2 = clock()
        dj = adapter(model, q, ks.fingers.reshape(-1, 3), action.finger.reshape(-1, 3))
        t3 = clock()
        q = clamp_joints(model, q + dj)[0]
        base = step_base(base, action)
        contacts = detect_contacts(model, q, base, scene)
        n_fc = len(finger_contacts(contacts))
        frame = {
            "t": t, "q": q.tolist(), "base": base.to_dict(), "action": action.to_dict(),
            "contacts": n_fc, "ibs_points": len(cloud),
            "timings_ms": {"features": 1e3 * (t1 - t0), "prediction": 1e3 * (t2 - t1),
                           "adaptation": 1e3 * (t3 - t2)},
        }
        if ctx is not None:
            frame["self_collision"] = self_collision_loss(model, ctx, q, return_grad=False)
        traj.frames.append(frame)
        if decide_stop(action.a_s, n_fc):
            traj.stopped = True
            break
    return traj


# ------------------------------------------------------ behaviour cloning
def bc_smoke_train(net, samples, steps=50, lr=1e-3):
    """Regress raw network outputs onto synthetic targets.

    ``samples`` holds ``(keypoints, cloud, target_finger (K, 6), target_global (7,))``
    tuples. Returns the per-step mean squared error; only meant to exercise
    gradients end to end.
    """
    losses = []
    for _ in range(steps):
        net.store.zero_grad()
        total = 0.0
        for ks, cloud, tf, tg in samples:
            fin, glob = policy_forward(net, encode_tokens(net, ks, cloud), tensor=True)
            rg = glob - tg[None]
            loss = (rg * rg).sum()
            if fin is not None:
                rf = fin - tf
                loss = loss + (rf * rf).sum()
            loss = loss * (1.0 / len(samples))
            loss.backward()
            total += float(loss.data)
        nn.optimizer_step(net.store, lr=lr)
        losses.append(total)
    return np.array(losses)
