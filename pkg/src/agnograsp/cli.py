"""Command-line entry point.

Every subcommand accepts ``--config`` (YAML with per-module sections),
``--seed`` and ``--out``. Exit status: 0 on success, 2 for configuration or
input errors, 3 for numeric failures.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness
from .harness import ConfigError, NumericFailure

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


# ---------------------------------------------------------------- helpers
def _gripper(arg):
    from .fixtures import GRIPPERS, gripper_path
    from .model import load_gripper

    return load_gripper(gripper_path(arg) if arg in GRIPPERS else Path(arg))


def _scene(arg):
    from .fixtures import SCENES, scene_path
    from .geom.scene import load_scene

    return load_scene(scene_path(arg) if arg in SCENES else Path(arg))


def _vec(text, n=None, what="vector"):
    try:
        v = np.array([float(x) for x in text.replace(",", " ").split()])
    except ValueError as exc:
        raise ConfigError(f"cannot parse {what} {text!r}") from exc
    if n is not None and len(v) != n:
        raise ConfigError(f"{what} needs {n} values, got {len(v)}")
    return v


def _joints(args, model):
    if args.q is None:
        return model.clamp(np.zeros(model.dof))
    return _vec(args.q, model.dof, "joint vector")


def _base(args, model, scene, cfg, radius_key="pose_radius", section="policy"):
    from .geom.sampling import sample_initial_poses
    from .model import BasePose

    if getattr(args, "base", None):
        v = _vec(args.base, 6, "base pose")
        return BasePose(v[:3], v[3:])
    if scene is None:
        return BasePose()
    seed = args.pose_seed if getattr(args, "pose_seed", None) is not None else cfg["seed"]
    return sample_initial_poses(scene.object_center, 1, seed=seed,
                                radius=float(cfg[section][radius_key]), model=model)[0]


def _write(out, text):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _camera(cfg, scene):
    from .geom.camera import Camera

    c = dict(cfg["camera"])
    intr = {k: c[k] for k in ("fx", "fy", "cx", "cy", "width", "height")}
    if c.get("pose") is not None:
        return Camera(pose=np.asarray(c["pose"], dtype=float).reshape(4, 4), **intr)
    target = scene.object_center if c.get("target") is None else c["target"]
    return Camera.look_at(c["eye"], target, **intr)


# ------------------------------------------------------------ subcommands
def cmd_fk(args, cfg):
    from .model import forward_kinematics, keypoint_state

    model = _gripper(args.gripper)
    q = _joints(args, model)
    base = _base(args, model, None, cfg)
    frames = forward_kinematics(model, q, base)
    ks = keypoint_state(model, q, base)
    payload = {"gripper": model.name, "q": q, "base": base.to_dict(),
               "links": {l.name: frames[i] for i, l in enumerate(model.links)},
               "keypoints": {"r": ks.r, "p0": ks.p0, "fingers": ks.fingers},
               "state": ks.vector()}
    _write(args.out, harness.emit_result("fk", payload, cfg))


def cmd_ibs(args, cfg):
    from .ibs import sample_ibs, write_ibs_ply

    model, scene = _gripper(args.gripper), _scene(args.scene)
    q = _joints(args, model)
    base = _base(args, model, scene, cfg)
    cloud = sample_ibs(scene, model, q, base, harness.ibs_params(cfg))
    payload = {"points": len(cloud), "provenance": cloud.provenance,
               "component_counts": np.bincount(cloud.component, minlength=model.n_components),
               "max_abs_ds_minus_dg": float(np.abs(cloud.d_s - cloud.d_g).max()),
               "coords_sha": _digest(cloud.features())}
    if args.out is not None and str(args.out).endswith(".ply"):
        write_ibs_ply(args.out, cloud)
        harness.emit_result("ibs", payload, cfg, Path(str(args.out) + ".json"))
    else:
        _write(args.out, harness.emit_result("ibs", payload, cfg))


def _digest(arr):
    import hashlib

    return hashlib.sha256(np.ascontiguousarray(arr, dtype="<f8").tobytes()).hexdigest()


def cmd_cull(args, cfg):
    from .geom.camera import partial_view_cull
    from .geom.ply import write_cloud

    scene = _scene(args.scene)
    cam = _camera(cfg, scene)
    pts, flags = partial_view_cull(scene, cam)
    payload = {"scene": scene.name, "camera": cam.to_dict(), "points": len(pts),
               "foreground_points": int(np.sum(flags)), "points_sha": _digest(pts)}
    if args.out is not None and str(args.out).endswith(".ply"):
        write_cloud(args.out, pts, flags)
        harness.emit_result("cull", payload, cfg, Path(str(args.out) + ".json"))
    else:
        _write(args.out, harness.emit_result("cull", payload, cfg))


def _adapter(args, model, cfg):
    from .adapt import AdaptationNet, CollisionContext
    from .policy import LearnedAdapter, ObIkAdapter, ObIkScAdapter

    b = cfg["baselines"]
    if args.adapter == "lb":
        if args.adapt_checkpoint is None:
            raise ConfigError("--adapter lb needs --adapt-checkpoint")
        return LearnedAdapter(AdaptationNet.load(args.adapt_checkpoint))
    if args.adapter == "ob-ik":
        return ObIkAdapter(int(b["iters"]), float(b["step"]))
    ctx = CollisionContext.build(model, int(cfg["adapt"]["collision_points"]), cfg["seed"])
    return ObIkScAdapter(ctx, int(b["iters"]), float(b["step"]))


def _policy(args, cfg):
    from .policy import PolicyNet, init_policy

    if getattr(args, "checkpoint", None):
        return PolicyNet.load(args.checkpoint)
    p = cfg["policy"]
    return init_policy(int(p["d"]), int(p["heads"]), int(p["layers"]),
                       tuple(p["point_widths"]), seed=cfg["seed"])


def cmd_rollout(args, cfg):
    from .adapt import CollisionContext
    from .policy import run_episode

    model, scene = _gripper(args.gripper), _scene(args.scene)
    net = _policy(args, cfg)
    base = _base(args, model, scene, cfg)
    ctx = CollisionContext.build(model, int(cfg["adapt"]["collision_points"]), cfg["seed"])
    steps = int(args.steps if args.steps is not None else cfg["policy"]["steps"])
    traj = run_episode(net, _adapter(args, model, cfg), model, scene, base, _joints(args, model),
                       steps, harness.ibs_params(cfg), ctx)
    for f in traj.frames:
        if not np.all(np.isfinite(f["q"])):
            raise NumericFailure("rollout produced non-finite joints")
    _write(args.out, traj.to_jsonl())


def cmd_adapt_train(args, cfg):
    from .adapt import TrainConfig, init_adaptation_net, train_adaptation

    model = _gripper(args.gripper)
    a = cfg["adapt"]
    updates = int(args.updates if args.updates is not None else a["updates"])
    net = init_adaptation_net(model, tuple(a["hidden"]), cfg["seed"], float(a["sigma"]),
                              anchored=bool(a["anchored"]))
    tc = TrainConfig(updates, int(a["batch"]), float(a["lr"]), float(a["lr_final"]),
                     float(a["sigma"]), float(a["omega"]), int(a["collision_points"]),
                     cfg["seed"])
    res = train_adaptation(net, model, tc)
    if args.checkpoint:
        net.save(args.checkpoint)
    rows = [{"update": i, "loss": float(v)} for i, v in enumerate(res.losses)]
    _write(args.out, harness.rows_to_csv(rows, ["update", "loss"]))


def cmd_adapt_eval(args, cfg):
    from .adapt import (AdaptationNet, CollisionContext, adapt_forward,
                        sample_adaptation_batch)
    from .metrics import collision_stats
    from .model import keypoint_positions

    model = _gripper(args.gripper)
    net = AdaptationNet.load(args.checkpoint)
    if net.dof != model.dof or net.n_keypoints != 2 * model.n_fingers:
        raise ConfigError("checkpoint does not match the gripper")
    ctx = CollisionContext.build(model, int(cfg["adapt"]["collision_points"]), cfg["seed"])
    if args.fixtures:
        data = np.load(args.fixtures)
        q, dp = data["q"], data["dp"]
        kp = keypoint_positions(model, q)
    else:
        rng = np.random.default_rng(cfg["seed"])
        q, kp, dp, _ = sample_adaptation_batch(model, rng, args.samples,
                                               float(cfg["adapt"]["sigma"]), ctx)
    dj = adapt_forward(net, q, kp, dp)
    qn = model.clamp(q + dj)
    err = np.linalg.norm(keypoint_positions(model, qn) - kp - dp, axis=-1).mean(axis=-1)
    cmd = np.linalg.norm(dp, axis=-1).mean(axis=-1)
    pct, loss = collision_stats(list(qn), model, ctx)
    payload = {"samples": len(q), "tracking_error": err, "commanded_norm": cmd,
               "relative_error": float(err.mean() / max(cmd.mean(), 1e-300)),
               "collision_percentage": pct, "collision_loss": loss}
    _write(args.out, harness.emit_result("adapt-eval", payload, cfg))


def cmd_retarget(args, cfg):
    from .retarget import mr_pipeline, read_name_map

    src, tgt = _gripper(args.source), _gripper(args.target)
    frames = [json.loads(line) for line in Path(args.trajectory).read_text().splitlines()
              if line.strip()]
    qs = [np.asarray(f["q"], dtype=float) for f in frames]
    name_map = read_name_map(args.name_map) if args.name_map else None
    out = mr_pipeline(qs, src, tgt, args.strategy, name_map,
                      iters=int(cfg["retarget"]["iters"]))
    lines = []
    for f, q in zip(frames, out):
        g = dict(f)
        g["source_q"] = f["q"]
        g["q"] = q.tolist()
        lines.append(json.dumps(g, sort_keys=True) + "\n")
    _write(args.out, "".join(lines))


def cmd_q1(args, cfg):
    from .geom.mesh import load_obj
    from .metrics import Contact, detect_contacts, q1
    from .model import BasePose

    doc_text = Path(args.grasp).read_text()
    try:
        doc = json.loads(doc_text)
    except json.JSONDecodeError:
        # a trajectory: use its last frame
        lines = [l for l in doc_text.splitlines() if l.strip()]
        doc = json.loads(lines[-1])
    m = cfg["metrics"]
    obj = load_obj(args.object)
    center = 0.5 * (obj.vertices.min(axis=0) + obj.vertices.max(axis=0))
    if "contacts" in doc and isinstance(doc["contacts"], list):
        contacts = [Contact.from_dict(c) for c in doc["contacts"]]
    else:
        if not (args.gripper and args.scene):
            raise ConfigError("a frame without contacts needs --gripper and --scene")
        model, scene = _gripper(args.gripper), _scene(args.scene)
        base = BasePose(doc["base"]["translation"], doc["base"]["rotation"])
        contacts = detect_contacts(model, np.asarray(doc["q"], dtype=float), base, scene,
                                   float(m["contact_delta"]))
        center = scene.object_center
    rho = obj.bounding_radius(center)
    mu = float(args.mu if args.mu is not None else m["mu"])
    val = q1(contacts, mu, rho, int(m["cone_edges"]), center, torsion=float(m["torsion"]))
    payload = {"q1": val, "mu": mu, "rho": rho, "contacts": [c.to_dict() for c in contacts]}
    _write(args.out, harness.emit_result("q1", payload, cfg))


def cmd_bench_adaptation(args, cfg):
    from .adapt import AdaptationNet, CollisionContext

    model, scene = _gripper(args.gripper), _scene(args.scene)
    b = cfg["bench"]
    frames = int(args.frames if args.frames is not None else b["frames"])
    net = AdaptationNet.load(args.adapt_checkpoint) if args.adapt_checkpoint else None
    ctx = CollisionContext.build(model, int(cfg["adapt"]["collision_points"]), cfg["seed"])
    rows = harness.bench_adaptation(
        model, scene, frames, net, ctx, cfg["seed"], int(b["warmup"]), int(b["batches"]),
        int(cfg["baselines"]["iters"]), float(cfg["baselines"]["step"]),
        float(b["pose_radius"]), harness.ibs_params(cfg), _policy(args, cfg))
    text = harness.emit_result("bench-adaptation", {"rows": rows}, cfg,
                               args.out, rows if rows else [])
    if args.out is None:
        sys.stdout.write(text)


def cmd_bench_repr(args, cfg):
    model = _gripper(args.gripper)
    scenes = [_scene(s) for s in args.scenes]
    b = cfg["bench"]
    frames = int(args.frames if args.frames is not None else 5)
    rows = harness.bench_representation(model, scenes, args.representation, frames, cfg["seed"],
                                        float(b["pose_radius"]), harness.ibs_params(cfg),
                                        warmup=1, batches=int(b["batches"]))
    text = harness.emit_result("bench-repr", {"rows": rows}, cfg, args.out, rows)
    if args.out is None:
        sys.stdout.write(text)


# ----------------------------------------------------------------- parser
def build_parser():
    p = argparse.ArgumentParser(prog="agnograsp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="YAML file with per-module sections")
        sp.add_argument("--seed", type=int, help="overrides the config seed")
        sp.add_argument("--out", help="output path (stdout when omitted)")
        sp.set_defaults(func=fn)
        return sp

    def pose_flags(sp):
        sp.add_argument("--q", help="joint vector, comma separated")
        sp.add_argument("--base", help="base pose x,y,z,rx,ry,rz (axis-angle)")
        sp.add_argument("--pose-seed", type=int, help="seed for the initial base pose")

    sp = add("fk", cmd_fk, "forward kinematics and keypoint state")
    sp.add_argument("--gripper", required=True)
    pose_flags(sp)

    sp = add("ibs", cmd_ibs, "sample the interaction bisector surface")
    sp.add_argument("--gripper", required=True)
    sp.add_argument("--scene", required=True)
    pose_flags(sp)

    sp = add("cull", cmd_cull, "depth-camera culling of a scene into a point cloud")
    sp.add_argument("--scene", required=True)

    sp = add("rollout", cmd_rollout, "kinematic policy rollout as JSON lines")
    sp.add_argument("--gripper", required=True)
    sp.add_argument("--scene", required=True)
    sp.add_argument("--checkpoint", help="policy checkpoint (untrained net when omitted)")
    sp.add_argument("--adapter", choices=("lb", "ob-ik", "ob-ik-sc"), default="ob-ik")
    sp.add_argument("--adapt-checkpoint")
    sp.add_argument("--steps", type=int, help="step cap")
    pose_flags(sp)

    sp = add("adapt-train", cmd_adapt_train, "train an adaptation net; loss curve as CSV")
    sp.add_argument("--gripper", required=True)
    sp.add_argument("--updates", type=int)
    sp.add_argument("--checkpoint", help="where to save the trained net")

    sp = add("adapt-eval", cmd_adapt_eval, "tracking error and collisions of a trained net")
    sp.add_argument("--gripper", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--fixtures", help="npz with arrays q (B, C) and dp (B, 2K, 3)")
    sp.add_argument("--samples", type=int, default=1000)

    sp = add("retarget", cmd_retarget, "map a joint trajectory to another gripper")
    sp.add_argument("--trajectory", required=True)
    sp.add_argument("--source", required=True)
    sp.add_argument("--target", required=True)
    sp.add_argument("--strategy", choices=("jm", "km"), default="jm")
    sp.add_argument("--name-map")

    sp = add("q1", cmd_q1, "grasp quality of contacts or a trajectory's last frame")
    sp.add_argument("--grasp", required=True)
    sp.add_argument("--object", required=True, help="object mesh (OBJ)")
    sp.add_argument("--mu", type=float)
    sp.add_argument("--gripper")
    sp.add_argument("--scene")

    sp = add("bench-adaptation", cmd_bench_adaptation, "adaptation timing and collision benchmark")
    sp.add_argument("--gripper", required=True)
    sp.add_argument("--scene", default="sphere_on_table")
    sp.add_argument("--frames", type=int)
    sp.add_argument("--adapt-checkpoint")
    sp.add_argument("--checkpoint", help="policy checkpoint")

    sp = add("bench-repr", cmd_bench_repr, "feature extraction timing per representation")
    sp.add_argument("--gripper", required=True)
    sp.add_argument("--scenes", nargs="+", default=["sphere_on_table", "block_on_table"])
    sp.add_argument("--representation", choices=("ibs", "ocm", "gcm"), default="ibs")
    sp.add_argument("--frames", type=int)
    return p


def main(argv=None):
    from .adapt import AdaptationDiverged
    from .geom.hull import DegenerateHullError
    from .ibs import NoIBSInRange
    from .model import GripperSpecError

    args = build_parser().parse_args(argv)
    try:
        cfg = harness.load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        args.func(args, cfg)
    except (NumericFailure, AdaptationDiverged, NoIBSInRange, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, GripperSpecError, DegenerateHullError, FileNotFoundError, KeyError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
