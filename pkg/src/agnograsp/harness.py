"""Configuration, result emission and the benchmark suite."""

import copy
import csv
import io
import json
import time
from pathlib import Path

import numpy as np

from . import __version__

SCHEMA_VERSION = 1

DEFAULT_CONFIG = {
    "seed": 0,
    "ibs": {"sphere_radius": 0.18, "voxel_resolution": 20, "threshold": None,
            "refine_iters": 10, "refine_tol": 1e-4, "n_points": 4096},
    "policy": {"d": 128, "heads": 4, "layers": 4, "point_widths": [64, 128], "steps": 20,
               "pose_radius": 0.20},
    "adapt": {"hidden": [256, 256, 256], "updates": 20000, "batch": 256, "lr": 1e-3,
              "lr_final": 1e-5, "sigma": 0.05, "omega": 1.0, "collision_points": 64,
              "anchored": True},
    "baselines": {"iters": 100, "step": 0.5},
    "metrics": {"contact_delta": 0.002, "mu": 0.5, "cone_edges": 8, "torsion": 0.1},
    "retarget": {"iters": 500},
    "bench": {"warmup": 10, "batches": 5, "frames": 20, "pose_radius": 0.12},
    "camera": {"fx": 300.0, "fy": 300.0, "cx": 159.5, "cy": 119.5, "width": 320,
               "height": 240, "pose": None, "eye": [0.35, 0.0, 0.25], "target": None},
}


class ConfigError(ValueError):
    """Malformed or unknown configuration."""


class NumericFailure(RuntimeError):
    """A computation produced non-finite or otherwise unusable numbers."""


def _merge(base, override, where):
    for k, v in override.items():
        if k not in base:
            raise ConfigError(f"unknown config key {where}{k!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config section {where}{k!r} must be a mapping")
            _merge(base[k], v, f"{where}{k}.")
        else:
            base[k] = v


def load_config(path=None, overrides=None):
    """Defaults merged with a YAML file and then with ``overrides``."""
    import yaml

    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            doc = yaml.safe_load(Path(path).read_text())
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if doc is not None:
            if not isinstance(doc, dict):
                raise ConfigError("config file must hold a mapping of sections")
            _merge(cfg, doc, "")
    if overrides:
        _merge(cfg, overrides, "")
    return cfg


def ibs_params(cfg, seed=None):
    from .ibs import IbsParams

    c = cfg["ibs"]
    try:
        return IbsParams(float(c["sphere_radius"]), int(c["voxel_resolution"]),
                         None if c["threshold"] is None else float(c["threshold"]),
                         int(c["refine_iters"]), float(c["refine_tol"]), int(c["n_points"]),
                         int(cfg["seed"] if seed is None else seed))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad ibs config: {exc}") from exc


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    return x


def result_document(kind, payload, cfg):
    return _jsonable({"schema_version": SCHEMA_VERSION, "kind": kind,
                      "toolkit_version": __version__, "config": cfg, "result": payload})


def emit_result(kind, payload, cfg, out=None, rows=None):
    """Write the JSON result (and a CSV next to it when ``rows`` are given).

    Returns the JSON text. ``out=None`` writes nothing.
    """
    text = json.dumps(result_document(kind, payload, cfg), indent=1, sort_keys=True) + "\n"
    if out is not None:
        out = Path(out)
        out.write_text(text)
        if rows is not None:
            out.with_suffix(".csv").write_text(rows_to_csv(rows))
    return text


def rows_to_csv(rows, header=None):
    buf = io.StringIO()
    if not rows and header is None:
        return ""
    header = list(rows[0]) if header is None else header
    w = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


# ---------------------------------------------------------------- timing
def median_of_means(fn, items, warmup=10, batches=5, clock=time.perf_counter):
    """Call ``fn`` on each item; returns (outputs, median over batches of the
    mean per-call milliseconds). ``warmup`` extra calls are made first."""
    if not items:
        return [], 0.0
    for i in range(warmup):
        fn(items[i % len(items)])
    outs, times = [], []
    for it in items:
        t0 = clock()
        outs.append(fn(it))
        times.append(1e3 * (clock() - t0))
    groups = [g for g in np.array_split(np.array(times), min(batches, len(times))) if len(g)]
    return outs, float(np.median([g.mean() for g in groups]))


# -------------------------------------------------------------- benches
def adaptation_frames(model, scene, n, seed=0, pose_radius=0.12, policy_net=None, ctx=None,
                      ibs_cfg=None):
    """Rollout-style frames: collision-free joints, initial base pose, IBS
    cloud and the policy's capped keypoint displacements."""
    from .adapt import sample_configurations
    from .geom.sampling import sample_initial_poses
    from .policy import init_policy

    rng = np.random.default_rng(seed)
    net = init_policy(seed=seed) if policy_net is None else policy_net
    qs = sample_configurations(model, rng, n, ctx)
    bases = sample_initial_poses(scene.object_center, n, seed=seed, radius=pose_radius,
                                 model=model)
    return [{"q": qs[i], "base": bases[i], "net": net, "ibs": ibs_cfg} for i in range(n)]


def bench_adaptation(model, scene, frames, adapt_net=None, ctx=None, seed=0, warmup=10,
                     batches=5, iters=100, step=0.5, pose_radius=0.12, ibs_cfg=None,
                     policy_net=None):
    """Timing of the three adaptation strategies on shared frames.

    Returns a list of rows with per-stage mean milliseconds and collision
    statistics of the adapted joints. ``frames = 0`` returns ``[]``.
    """
    from .adapt import CollisionContext, init_adaptation_net
    from .ibs import IbsParams, NoIBSInRange, sample_ibs
    from .metrics import collision_stats
    from .model import keypoint_state
    from .policy import (LearnedAdapter, ObIkAdapter, ObIkScAdapter, empty_cloud,
                         encode_tokens, policy_forward)

    if frames <= 0:
        return []
    ctx = CollisionContext.build(model, seed=seed) if ctx is None else ctx
    adapt_net = init_adaptation_net(model, seed=seed) if adapt_net is None else adapt_net
    ibs_cfg = IbsParams(seed=seed) if ibs_cfg is None else ibs_cfg
    items = adaptation_frames(model, scene, frames, seed, pose_radius, policy_net, ctx, ibs_cfg)

    def features(f):
        try:
            return sample_ibs(scene, model, f["q"], f["base"], f["ibs"])
        except NoIBSInRange:
            return empty_cloud(model)

    clouds, t_feat = median_of_means(features, items, warmup, batches)
    for f, c in zip(items, clouds):
        f["cloud"] = c

    def predict(f):
        ks = keypoint_state(model, f["q"], f["base"])
        return ks, policy_forward(f["net"], encode_tokens(f["net"], ks, f["cloud"])).capped()

    preds, t_pred = median_of_means(predict, items, warmup, batches)
    inputs = [(f["q"], ks.fingers.reshape(-1, 3), a.finger.reshape(-1, 3))
              for f, (ks, a) in zip(items, preds)]
    adapters = [LearnedAdapter(adapt_net), ObIkAdapter(iters, step),
                ObIkScAdapter(ctx, iters, step)]
    rows = []
    for ad in adapters:
        djs, t_ad = median_of_means(lambda x: ad(model, *x), inputs, warmup, batches)
        qs = [model.clamp(x[0] + dj) for x, dj in zip(inputs, djs)]
        pct, loss = collision_stats(qs, model, ctx)
        err = [np.linalg.norm(_realised(model, x, dj) - x[2], axis=-1).mean()
               for x, dj in zip(inputs, djs)]
        rows.append({"method": ad.name, "feature_extraction_ms": t_feat,
                     "unified_prediction_ms": t_pred, "adaptation_ms": t_ad,
                     "total_ms": t_feat + t_pred + t_ad, "collision_percentage": pct,
                     "collision_loss": loss, "tracking_error_m": float(np.mean(err))})
    return rows


def _realised(model, x, dj):
    from .model import keypoint_positions

    q, kp, _ = x
    return keypoint_positions(model, model.clamp(q + dj)) - kp


def bench_representation(model, scenes, representation="ibs", frames=5, seed=0,
                         pose_radius=0.12, ibs_cfg=None, warmup=1, batches=5):
    """Extraction time and cloud statistics of one representation per scene."""
    from .geom.sampling import sample_initial_poses
    from .ibs import IbsParams, extract_gcm, extract_ocm, sample_ibs

    if representation not in ("ibs", "ocm", "gcm"):
        raise ValueError(f"unknown representation {representation!r}")
    ibs_cfg = IbsParams(seed=seed) if ibs_cfg is None else ibs_cfg
    q = model.clamp(np.zeros(model.dof))
    rows = []
    for scene in scenes:
        bases = sample_initial_poses(scene.object_center, frames, seed=seed, radius=pose_radius,
                                     model=model)

        def extract(b):
            if representation == "ibs":
                return sample_ibs(scene, model, q, b, ibs_cfg)
            if representation == "ocm":
                return extract_ocm(scene, model, q, b, n=ibs_cfg.n_points, seed=seed)
            return extract_gcm(scene, model, q, b, n=ibs_cfg.n_points, seed=seed)

        clouds, t = median_of_means(extract, list(bases), warmup, batches)
        sizes = [len(c) for c in clouds]
        comp = np.mean([np.bincount(c.component, minlength=model.n_components) / len(c)
                        for c in clouds], axis=0) if clouds else np.zeros(model.n_components)
        fg = np.mean([c.b_s.mean() for c in clouds]) if clouds else 0.0
        rows.append({"scene": scene.name, "representation": representation, "frames": frames,
                     "extraction_ms": t, "points": int(np.mean(sizes)) if sizes else 0,
                     "foreground_fraction": float(fg),
                     "component_fractions": " ".join(f"{v:.6f}" for v in comp)})
    return rows
