"""Gripper-specific adaptation: keypoint displacements to joint changes.

Contains the learned adaptation network, the cycle point loss, the convex-hull
self-collision loss, the self-supervised trainer and the two optimization
baselines (OB-IK and OB-IK+SC).
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .geom.sampling import sample_link_surface
from .geom.hull import signed_distance_hull
from .model import keypoint_positions
from .rotations import invert_transform

OMEGA = 1.0


class AdaptationDiverged(RuntimeError):
    """Training produced a non-finite loss."""


# ------------------------------------------------------------------ network
@dataclass
class AdaptationNet:
    """MLP from (q, keypoints, displacements) to a joint change.

    Inputs are standardized with statistics fixed at construction; the output
    layer starts at zero so an untrained net predicts ``dj = 0``. An
    ``anchored`` net returns ``f(q, kp, dp) - f(q, kp, 0)``, so a zero
    displacement command never moves the joints.
    """

    store: nn.ParamStore
    dof: int
    n_keypoints: int
    hidden: tuple = (256, 256, 256)
    out_scale: float = 0.05
    gripper: str = ""
    anchored: bool = True

    @property
    def in_dim(self):
        return self.dof + 6 * self.n_keypoints

    def to_meta(self):
        return {"kind": "adaptation", "dof": self.dof, "n_keypoints": self.n_keypoints,
                "hidden": list(self.hidden), "out_scale": self.out_scale, "gripper": self.gripper,
                "anchored": self.anchored}

    def save(self, path):
        nn.save_params(self.store, path, meta=self.to_meta())

    @classmethod
    def load(cls, path):
        store, meta = nn.load_params(path)
        if meta.get("kind") != "adaptation":
            raise ValueError(f"{path}: not an adaptation checkpoint")
        return cls(store, meta["dof"], meta["n_keypoints"], tuple(meta["hidden"]),
                   meta["out_scale"], meta.get("gripper", ""), meta.get("anchored", False))


def _input_stats(model, sigma, rng, n=4096):
    q = rng.uniform(model.lower, model.upper, size=(n, model.dof))
    kp = keypoint_positions(model, q).reshape(n, -1)
    qt = model.clamp(q + rng.normal(scale=sigma, size=q.shape))
    dp = keypoint_positions(model, qt).reshape(n, -1) - kp
    x = np.concatenate([q, kp, dp], axis=1)
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    # displacements are zero-mean by construction; keep zero input at zero
    mu[model.dof + kp.shape[1]:] = 0.0
    sd[model.dof + kp.shape[1]:] = np.sqrt((dp ** 2).mean())
    return mu, np.where(sd > 1e-9, sd, 1.0)


def init_adaptation_net(model, hidden=(256, 256, 256), seed=0, sigma=0.05, zero_init=True,
                        anchored=True):
    """Fresh adaptation MLP. With ``zero_init`` the output layer starts at
    zero so the untrained net predicts ``dj = 0``."""
    rng = np.random.default_rng(seed)
    nk = 2 * model.n_fingers
    store = nn.ParamStore()
    mu, sd = _input_stats(model, sigma, rng)
    store.add("norm.mu", mu)
    store.add("norm.sd", sd)
    nn.init_mlp(store, "mlp", [model.dof + 6 * nk, *hidden, model.dof], rng, zero_last=zero_init)
    return AdaptationNet(store, model.dof, nk, tuple(hidden), sigma, model.name, anchored)


def _net_input(net, q, keypoints, displacements):
    q = np.atleast_2d(q)
    b = len(q)
    x = np.concatenate([q, np.reshape(keypoints, (b, -1)), np.reshape(displacements, (b, -1))],
                       axis=1)
    if x.shape[1] != net.in_dim:
        raise ValueError(f"adaptation input has width {x.shape[1]}, expected {net.in_dim}")
    return (x - net.store["norm.mu"].data) / net.store["norm.sd"].data


def adapt_forward(net, q, keypoints, displacements, tensor=False):
    """Joint change for one sample (vectors) or a batch (leading axis).

    ``keypoints`` and ``displacements`` are the 2K finger points in the
    gripper-local frame. The caller clamps ``q + dj`` to the joint limits.
    """
    single = np.ndim(q) == 1
    x = _net_input(net, q, keypoints, displacements)
    if net.anchored:
        # one pass over [x; x with the displacement block zeroed]
        x0 = x.copy()
        x0[:, net.dof + 3 * net.n_keypoints:] = 0.0
        both = nn.mlp_forward(net.store, "mlp", np.concatenate([x, x0]))
        b = len(x)
        out = (nn.getitem(both, slice(0, b)) - nn.getitem(both, slice(b, 2 * b))) * net.out_scale
    else:
        out = nn.mlp_forward(net.store, "mlp", x) * net.out_scale
    if tensor:
        return out
    return out.data[0] if single else out.data


# ------------------------------------------------------------ cycle loss
def cycle_point_loss(model, q, dj, displacements, return_grad=True, straight_through=False):
    """Half the squared mismatch between realised and commanded keypoint motion.

    ``q`` and ``dj`` may carry a leading batch axis; the loss is summed over
    it. Forward kinematics is evaluated at the clamped ``q + dj``. The exact
    gradient vanishes on clamped coordinates; ``straight_through`` passes it
    through the clamp instead, which the trainer uses so that predictions
    beyond a limit are still pulled back.
    """
    q = np.asarray(q, dtype=float)
    dj = np.asarray(dj, dtype=float)
    qt = q + dj
    qc = model.clamp(qt)
    frames = model.link_frames(qc, return_joints=True)
    e = keypoint_positions(model, qc, frames[0])
    p = keypoint_positions(model, q)
    r = e - p - np.reshape(displacements, e.shape)
    loss = 0.5 * float(np.sum(r * r))
    if not return_grad:
        return loss
    atts = model.keypoint_attachments()
    if not atts:
        return loss, np.zeros_like(dj)
    links = np.array([a.link for a in atts], dtype=np.int64)
    J = model.point_jacobian(qc, links, e, frames=frames)
    g = np.einsum("...nic,...ni->...c", J, r)
    if not straight_through:
        g = np.where(qc == qt, g, 0.0)
    return loss, g


# --------------------------------------------------------- self-collision
def _mesh_ancestor(model, link):
    p = model.parent_link[link]
    while p >= 0 and model.links[p].mesh is None:
        p = model.parent_link[p]
    return p


@dataclass
class CollisionContext:
    """Link hulls, link surface samples and the ordered link pairs to test."""

    hulls: dict
    samples: dict
    pairs: list
    excluded: set
    radius: dict = field(default_factory=dict)
    center: dict = field(default_factory=dict)

    @classmethod
    def build(cls, model, points_per_link=64, seed=0, exclude=None):
        links = [i for i, l in enumerate(model.links) if l.mesh is not None]
        pts = sample_link_surface(model, points_per_link, seed)
        hulls = {i: model.links[i].hull for i in links}
        samples = {i: pts[i] for i in links}
        if exclude is None:
            exclude = set()
            for i in links:
                a = _mesh_ancestor(model, i)
                if a >= 0:
                    exclude |= {(i, a), (a, i)}
        else:
            exclude = {(a, b) for a, b in exclude} | {(b, a) for a, b in exclude}
        pairs = [(m, l) for m in links for l in links if m != l and (m, l) not in exclude]
        center = {i: hulls[i].centroid for i in links}
        radius = {i: float(np.linalg.norm(hulls[i].vertices - center[i], axis=1).max())
                  for i in links}
        return cls(hulls, samples, pairs, exclude, radius, center)


def _pair_candidates(ctx, centers, m, l):
    """Batch entries whose link bounding spheres overlap."""
    d2 = np.sum((centers[m] - centers[l]) ** 2, axis=1)
    return np.flatnonzero(d2 < (ctx.radius[m] + ctx.radius[l]) ** 2)


def self_collision_terms(model, ctx, q, return_grad=True):
    """Per-configuration self-collision losses for ``q`` of shape (B, C).

    Returns ``(losses (B,), grads (B, C))``; the gradient uses the relative
    velocity of each penetrating sample with respect to the hull it
    penetrates.
    """
    qb = np.atleast_2d(np.asarray(q, dtype=float))
    T, axes, origins = model.link_frames(qb, return_joints=True)
    losses = np.zeros(len(qb))
    grad = np.zeros_like(qb)
    moves = model.joint_ancestors
    act = [(j.q_index, model.joints.index(j), j.type) for j in model.actuated_joints]
    centers = {i: T[:, i, :3, :3] @ c + T[:, i, :3, 3] for i, c in ctx.center.items()}
    inv = {}
    for m, l in ctx.pairs:
        bi = _pair_candidates(ctx, centers, m, l)
        if len(bi) == 0:
            continue
        s = ctx.samples[m]
        if l not in inv:
            inv[l] = invert_transform(T[:, l])
        # samples of link m expressed in the frame of link l
        Tml = inv[l][bi] @ T[bi, m]
        y = np.matmul(s, np.swapaxes(Tml[:, :3, :3], 1, 2)) + Tml[:, None, :3, 3]
        # only samples inside the bounding sphere of hull l can penetrate it
        near = np.sum((y - ctx.center[l]) ** 2, axis=-1) < ctx.radius[l] ** 2
        b_idx, n_idx = np.nonzero(near)
        if len(b_idx) == 0:
            continue
        d, gy = signed_distance_hull(ctx.hulls[l], y[b_idx, n_idx], return_grad=True)
        inside = d > 0
        if not inside.any():
            continue
        b_idx, n_idx, d, gy = b_idx[inside], n_idx[inside], d[inside], gy[inside]
        B = bi[b_idx]
        np.add.at(losses, B, d)
        if not return_grad:
            continue
        Tm = T[B, m]
        xw = np.einsum("pij,pj->pi", Tm[:, :3, :3], s[n_idx]) + Tm[:, :3, 3]
        gw = np.einsum("pij,pj->pi", T[B, l, :3, :3], gy)
        for c, j, kind in act:
            w = float(moves[m, j]) - float(moves[l, j])
            if w == 0.0:
                continue
            a = axes[B, j]
            col = np.cross(a, xw - origins[B, j]) if kind == "revolute" else a
            np.add.at(grad[:, c], B, w * np.einsum("pi,pi->p", gw, col))
    return losses, grad


def self_collision_loss(model, ctx, q, return_grad=True):
    """Sum of penetration depths of link samples inside other links' hulls.

    ``q`` has shape (C,) or (B, C); the loss is summed over the batch.
    """
    q = np.asarray(q, dtype=float)
    losses, grad = self_collision_terms(model, ctx, q, return_grad)
    loss = float(losses.sum())
    if not return_grad:
        return loss
    return loss, (grad if q.ndim > 1 else grad[0])


def total_adaptation_loss(model, ctx, q, dj, displacements, omega=OMEGA, return_grad=True,
                          straight_through=False):
    """Cycle loss plus ``omega`` times the self-collision loss at clamped ``q + dj``."""
    qt = np.asarray(q, dtype=float) + np.asarray(dj, dtype=float)
    qc = model.clamp(qt)
    if not return_grad:
        lp = cycle_point_loss(model, q, dj, displacements, return_grad=False)
        return lp + omega * self_collision_loss(model, ctx, qc, return_grad=False)
    lp, gp = cycle_point_loss(model, q, dj, displacements, straight_through=straight_through)
    ls, gs = self_collision_loss(model, ctx, qc)
    if not straight_through:
        gs = np.where(qc == qt, gs, 0.0)
    return lp + omega * ls, gp + omega * gs


# ---------------------------------------------------------------- training
@dataclass
class TrainConfig:
    updates: int = 20000
    batch: int = 256
    lr: float = 1e-3
    lr_final: float = 1e-5
    sigma: float = 0.05
    omega: float = OMEGA
    collision_points: int = 64
    seed: int = 0
    log_every: int = 100
    pool: int = 65536
    zero_fraction: float = 0.0
    free_targets: bool = True


@dataclass
class TrainResult:
    net: AdaptationNet
    losses: np.ndarray
    seconds: float
    config: TrainConfig


def sample_configurations(model, rng, n, ctx=None):
    """``n`` configurations uniform in the joint limits; with ``ctx`` only
    self-collision-free ones are kept."""
    if ctx is None:
        return rng.uniform(model.lower, model.upper, size=(n, model.dof))
    out = np.zeros((0, model.dof))
    while len(out) < n:
        q = rng.uniform(model.lower, model.upper, size=(2 * n, model.dof))
        free = self_collision_terms(model, ctx, q, return_grad=False)[0] == 0
        out = np.concatenate([out, q[free]])
    return out[:n]


def sample_adaptation_batch(model, rng, batch, sigma=0.05, ctx=None, pool=None,
                            zero_fraction=0.0, free_targets=False, redraws=8):
    """Self-supervised samples: ``q`` uniform in limits (collision-free when
    ``ctx`` is given), ``dj*`` Gaussian and clamped, displacements from
    forward kinematics.

    ``pool`` is an optional array of configurations to draw ``q`` from
    instead. A ``zero_fraction`` of the rows get ``dj* = 0``. With
    ``free_targets`` (and ``ctx``) a ``dj*`` whose target collides is redrawn
    up to ``redraws`` times and then set to zero.
    """
    if pool is not None:
        q = pool[rng.integers(len(pool), size=batch)]
    else:
        q = sample_configurations(model, rng, batch, ctx)
    dj = model.clamp(q + rng.normal(scale=sigma, size=q.shape)) - q
    if zero_fraction > 0:
        dj[rng.random(batch) < zero_fraction] = 0.0
    if free_targets and ctx is not None:
        bad = np.flatnonzero(self_collision_terms(model, ctx, q + dj, return_grad=False)[0] > 0)
        for _ in range(redraws):
            if len(bad) == 0:
                break
            qb = q[bad]
            dj[bad] = model.clamp(qb + rng.normal(scale=sigma, size=qb.shape)) - qb
            hit = self_collision_terms(model, ctx, q[bad] + dj[bad], return_grad=False)[0] > 0
            bad = bad[hit]
        dj[bad] = 0.0
    kp = keypoint_positions(model, q)
    dp = keypoint_positions(model, q + dj) - kp
    return q, kp, dp, dj


def train_adaptation(net, model, config=None, ctx=None, callback=None):
    """Self-supervised training with the cycle and self-collision losses.

    Raises :class:`AdaptationDiverged` if the loss becomes non-finite.
    """
    cfg = TrainConfig() if config is None else config
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    if ctx is None and cfg.omega:
        ctx = CollisionContext.build(model, cfg.collision_points, cfg.seed)
    train = [k for k in net.store if not k.startswith("norm.")]
    # drawing from a fixed collision-free pool avoids a collision query per batch
    pool = sample_configurations(model, rng, cfg.pool, ctx) if cfg.pool else None
    losses = np.empty(cfg.updates)
    for step in range(cfg.updates):
        frac = step / max(cfg.updates - 1, 1)
        lr = cfg.lr_final + 0.5 * (cfg.lr - cfg.lr_final) * (1.0 + np.cos(np.pi * frac))
        q, kp, dp, _ = sample_adaptation_batch(model, rng, cfg.batch, cfg.sigma, ctx, pool,
                                               cfg.zero_fraction, cfg.free_targets)
        net.store.zero_grad()
        out = adapt_forward(net, q, kp, dp, tensor=True)
        dj = out.data
        if cfg.omega:
            loss, g = total_adaptation_loss(model, ctx, q, dj, dp, cfg.omega,
                                            straight_through=True)
        else:
            loss, g = cycle_point_loss(model, q, dj, dp, straight_through=True)
        loss /= cfg.batch
        if not np.isfinite(loss) or not np.all(np.isfinite(g)):
            raise AdaptationDiverged(
                f"adaptation loss became non-finite at update {step} "
                f"(last finite losses: {losses[max(0, step - 5):step].tolist()})")
        out.backward(g / cfg.batch)
        nn.optimizer_step(net.store, {k: net.store[k].grad for k in train}, lr=lr)
        losses[step] = loss
        if callback is not None and step % cfg.log_every == 0:
            callback(step, loss)
    return TrainResult(net, losses, time.perf_counter() - t0, cfg)


def tracking_error(model, net, q, kp, dp):
    """Per-sample mean keypoint error after applying the predicted joint change
    and the matching mean commanded displacement norm."""
    dj = adapt_forward(net, q, kp, dp)
    e = keypoint_positions(model, model.clamp(q + dj))
    err = np.linalg.norm(e - kp - dp, axis=-1).mean(axis=-1)
    cmd = np.linalg.norm(dp, axis=-1).mean(axis=-1)
    return err, cmd


# ------------------------------------------------------- optimization baselines
@dataclass
class SolveInfo:
    loss: float
    residual: float
    iterations: int
    history: list


def _descent(objective, dj0, lower, upper, iters, step, tol=0.0):
    """Projected gradient descent with backtracking.

    The first trial step is ``step``; later iterations try the
    Barzilai-Borwein step from the last accepted move (or twice the last
    accepted step when that is undefined) and halve it until the objective
    does not increase, so the accepted objective values never rise.
    """
    dj = np.clip(dj0, lower, upper)
    f, g = objective(dj)
    history = [f]
    alpha = step
    it = 0
    for it in range(1, iters + 1):
        if not np.any(g) or f <= tol:
            it -= 1
            break
        accepted = False
        for _ in range(60):
            cand = np.clip(dj - alpha * g, lower, upper)
            fc, gc = objective(cand)
            if fc <= f:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            it -= 1
            break
        s_, y_ = cand - dj, gc - g
        sy = float(s_ @ y_)
        alpha = float(s_ @ s_) / sy if sy > 0 else 2.0 * alpha
        dj, f, g = cand, fc, gc
        history.append(f)
    return dj, f, history, it


def ob_ik_solve(model, q, displacements, iters=100, step=0.5, return_info=False):
    """OB-IK: descent on the cycle loss over ``dj`` starting at zero."""
    q = np.asarray(q, dtype=float)

    def obj(dj):
        return cycle_point_loss(model, q, dj, displacements)

    dj, f, hist, it = _descent(obj, np.zeros(model.dof), model.lower - q, model.upper - q,
                               iters, step)
    if return_info:
        return dj, SolveInfo(f, float(np.sqrt(2.0 * f)), it, hist)
    return dj


def ob_ik_sc_solve(model, q, displacements, ctx, iters=100, step=0.5, omega=OMEGA,
                   return_info=False):
    """OB-IK+SC: as :func:`ob_ik_solve` with the self-collision term added."""
    q = np.asarray(q, dtype=float)

    def obj(dj):
        return total_adaptation_loss(model, ctx, q, dj, displacements, omega)

    dj, f, hist, it = _descent(obj, np.zeros(model.dof), model.lower - q, model.upper - q,
                               iters, step)
    if return_info:
        lp = cycle_point_loss(model, q, dj, displacements, return_grad=False)
        return dj, SolveInfo(f, float(np.sqrt(2.0 * lp)), it, hist)
    return dj
