import json

import numpy as np
import pytest
import yaml

from agnograsp import harness
from agnograsp.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main
from agnograsp.harness import ConfigError, load_config, median_of_means, rows_to_csv

SMALL = {"policy": {"d": 8, "heads": 2, "layers": 1, "point_widths": [8, 8], "steps": 2},
         "ibs": {"n_points": 256, "voxel_resolution": 12},
         "adapt": {"hidden": [16, 16], "batch": 16, "collision_points": 16},
         "bench": {"warmup": 1, "batches": 2, "frames": 2}}


def strip_timings(x):
    if isinstance(x, dict):
        return {k: strip_timings(v) for k, v in x.items() if not k.endswith("_ms")}
    if isinstance(x, list):
        return [strip_timings(v) for v in x]
    return x


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "small.yaml"
    p.write_text(yaml.safe_dump(SMALL))
    return str(p)


# ---------------------------------------------------------------- config
def test_config_defaults_and_merge(tmp_path):
    cfg = load_config()
    assert cfg["ibs"]["n_points"] == 4096 and cfg["ibs"]["sphere_radius"] == 0.18
    assert cfg["ibs"]["voxel_resolution"] == 20 and cfg["policy"]["pose_radius"] == 0.20
    assert cfg["adapt"]["omega"] == 1.0
    p = tmp_path / "c.yaml"
    p.write_text("ibs:\n  n_points: 100\n")
    cfg = load_config(p, {"seed": 4})
    assert cfg["ibs"]["n_points"] == 100 and cfg["seed"] == 4
    assert cfg["ibs"]["sphere_radius"] == 0.18
    # defaults are not mutated by loading
    assert harness.DEFAULT_CONFIG["ibs"]["n_points"] == 4096


@pytest.mark.parametrize("text", ["ibs:\n  bogus: 1\n", "nosuch: {}\n", "ibs: 3\n", "- 1\n",
                                  "a: [\n"])
def test_config_errors(tmp_path, text):
    p = tmp_path / "c.yaml"
    p.write_text(text)
    with pytest.raises(ConfigError):
        load_config(p)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.yaml")


def test_result_document_schema():
    cfg = load_config()
    doc = json.loads(harness.emit_result("x", {"a": np.arange(3), "b": np.float64(0.5)}, cfg))
    assert doc["schema_version"] == harness.SCHEMA_VERSION
    assert doc["kind"] == "x" and doc["result"] == {"a": [0, 1, 2], "b": 0.5}
    assert doc["config"] == cfg


def test_rows_to_csv():
    assert rows_to_csv([]) == ""
    assert rows_to_csv([], ["a"]) == "a\n"
    text = rows_to_csv([{"a": 1, "b": 0.1}])
    assert text == "a,b\n1,0.1\n"


def test_median_of_means():
    ticks = iter(range(1000))
    calls = []
    outs, t = median_of_means(lambda x: calls.append(x) or x * 2, [1, 2, 3], warmup=2,
                              batches=2, clock=lambda: next(ticks) / 1e3)
    assert outs == [2, 4, 6]
    assert calls == [1, 2, 1, 2, 3]
    assert t == 1.0
    assert median_of_means(lambda x: x, []) == ([], 0.0)


def test_bench_zero_frames(planar2, sphere_scene):
    assert harness.bench_adaptation(planar2, sphere_scene, 0) == []


def test_bench_adaptation_rows(spatial3, sphere_scene):
    from agnograsp.ibs import IbsParams
    from agnograsp.policy import init_policy

    rows = harness.bench_adaptation(spatial3, sphere_scene, 2, warmup=0, batches=1, iters=5,
                                    ibs_cfg=IbsParams(n_points=128, voxel_resolution=10),
                                    policy_net=init_policy(8, 2, 1, (8, 8)))
    assert [r["method"] for r in rows] == ["LB-IK+SC", "OB-IK", "OB-IK+SC"]
    for r in rows:
        assert np.isclose(r["total_ms"], r["feature_extraction_ms"] + r["unified_prediction_ms"]
                          + r["adaptation_ms"])
        assert 0.0 <= r["collision_percentage"] <= 100.0


def test_bench_representation(planar2, sphere_scene):
    from agnograsp.ibs import IbsParams

    for rep in ("ibs", "ocm", "gcm"):
        rows = harness.bench_representation(planar2, [sphere_scene], rep, 2,
                                            ibs_cfg=IbsParams(n_points=128, voxel_resolution=10),
                                            batches=1)
        assert rows[0]["representation"] == rep and rows[0]["points"] > 0
    with pytest.raises(ValueError):
        harness.bench_representation(planar2, [sphere_scene], "xyz")


# ------------------------------------------------------------------- CLI
def test_cli_fk(tmp_path, capsys):
    out = tmp_path / "fk.json"
    assert main(["fk", "--gripper", "planar2", "--q", "0.1,0.2,0.3,0.4", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["kind"] == "fk" and doc["result"]["q"] == [0.1, 0.2, 0.3, 0.4]
    assert len(doc["result"]["state"]) == 6 * 3
    assert main(["fk", "--gripper", "planar2"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["kind"] == "fk"


@pytest.mark.parametrize("argv", [
    ["fk", "--gripper", "nosuch"],
    ["fk", "--gripper", "planar2", "--q", "1,2"],
    ["fk", "--gripper", "planar2", "--q", "a,b,c,d"],
    ["fk", "--gripper", "planar2", "--base", "0,0,0"],
    ["cull", "--scene", "nosuch"],
    ["rollout", "--gripper", "planar2", "--scene", "sphere_on_table", "--adapter", "lb"],
])
def test_cli_input_errors(argv, capsys):
    assert main(argv) == EXIT_CONFIG
    assert capsys.readouterr().err.startswith("error:")


def test_cli_bad_config(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("ibs:\n  nope: 1\n")
    assert main(["fk", "--gripper", "planar2", "--config", str(p)]) == EXIT_CONFIG


def test_cli_numeric_failure(tmp_path):
    # a base far from the object leaves no IBS in range
    out = tmp_path / "i.json"
    rc = main(["ibs", "--gripper", "planar2", "--scene", "sphere_on_table",
               "--base", "5,5,5,0,0,0", "--out", str(out)])
    assert rc == EXIT_NUMERIC


def test_cli_ibs_and_ply(tmp_path, small_cfg):
    out = tmp_path / "ibs.ply"
    assert main(["ibs", "--gripper", "planar2", "--scene", "sphere_on_table",
                 "--config", small_cfg, "--out", str(out)]) == 0
    doc = json.loads((tmp_path / "ibs.ply.json").read_text())
    assert doc["result"]["points"] == 256
    assert out.read_bytes().startswith(b"ply")


def test_cli_cull(tmp_path):
    out = tmp_path / "c.json"
    assert main(["cull", "--scene", "block_on_table", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["result"]["points"] > 0 and 0 < doc["result"]["foreground_points"]


def test_cli_train_eval_rollout_q1(tmp_path, small_cfg):
    ck = tmp_path / "a.agnn"
    csv_out = tmp_path / "loss.csv"
    assert main(["adapt-train", "--gripper", "planar2", "--updates", "5", "--config", small_cfg,
                 "--checkpoint", str(ck), "--out", str(csv_out)]) == 0
    lines = csv_out.read_text().splitlines()
    assert lines[0] == "update,loss" and len(lines) == 6
    ev = tmp_path / "e.json"
    assert main(["adapt-eval", "--gripper", "planar2", "--checkpoint", str(ck),
                 "--samples", "20", "--config", small_cfg, "--out", str(ev)]) == 0
    assert json.loads(ev.read_text())["result"]["samples"] == 20
    assert main(["adapt-eval", "--gripper", "spatial3", "--checkpoint", str(ck)]) == EXIT_CONFIG

    traj = tmp_path / "t.jsonl"
    for adapter in ("lb", "ob-ik", "ob-ik-sc"):
        assert main(["rollout", "--gripper", "planar2", "--scene", "sphere_on_table",
                     "--adapter", adapter, "--adapt-checkpoint", str(ck), "--config", small_cfg,
                     "--out", str(traj)]) == 0
    frames = [json.loads(l) for l in traj.read_text().splitlines()]
    assert 1 <= len(frames) <= 2 and len(frames[0]["q"]) == 4

    q1_out = tmp_path / "q.json"
    from agnograsp.fixtures import DATA
    obj = str(DATA / "meshes" / "sphere_r4cm.obj")
    assert main(["q1", "--grasp", str(traj), "--object", obj, "--gripper", "planar2",
                 "--scene", "sphere_on_table", "--out", str(q1_out)]) == 0
    assert json.loads(q1_out.read_text())["result"]["q1"] >= 0.0
    assert main(["q1", "--grasp", str(traj), "--object", obj]) == EXIT_CONFIG


def test_cli_q1_contacts(tmp_path):
    from agnograsp.fixtures import DATA

    g = tmp_path / "g.json"
    g.write_text(json.dumps({"contacts": [
        {"point": [0.04, 0, 0], "normal": [1, 0, 0], "component": 1, "distance": 0.0},
        {"point": [-0.04, 0, 0], "normal": [-1, 0, 0], "component": 2, "distance": 0.0}]}))
    out = tmp_path / "q.json"
    obj = str(DATA / "meshes" / "sphere_r4cm.obj")
    assert main(["q1", "--grasp", str(g), "--object", obj, "--out", str(out)]) == 0
    assert json.loads(out.read_text())["result"]["q1"] > 0


def test_cli_retarget(tmp_path):
    traj = tmp_path / "t.jsonl"
    traj.write_text("".join(json.dumps({"t": i, "q": [0.1 * i] * 12}) + "\n" for i in range(3)))
    nm = tmp_path / "map.txt"
    nm.write_text("th_j1 th_j1\nf1_j1 f1_j1\n")
    out = tmp_path / "o.jsonl"
    assert main(["retarget", "--trajectory", str(traj), "--source", "hand4", "--target", "hand5",
                 "--name-map", str(nm), "--out", str(out)]) == 0
    frames = [json.loads(l) for l in out.read_text().splitlines()]
    assert len(frames) == 3 and len(frames[0]["q"]) == 15
    assert frames[2]["source_q"] == [0.2] * 12
    assert main(["retarget", "--trajectory", str(traj), "--source", "hand4", "--target", "hand4",
                 "--strategy", "km", "--out", str(out)]) == 0


def test_cli_bench(tmp_path, small_cfg):
    out = tmp_path / "b.json"
    assert main(["bench-adaptation", "--gripper", "planar2", "--frames", "0",
                 "--config", small_cfg, "--out", str(out)]) == 0
    assert json.loads(out.read_text())["result"]["rows"] == []
    assert out.with_suffix(".csv").read_text() == ""
    assert main(["bench-adaptation", "--gripper", "planar2", "--config", small_cfg,
                 "--out", str(out)]) == 0
    assert len(json.loads(out.read_text())["result"]["rows"]) == 3
    assert out.with_suffix(".csv").read_text().startswith("method,")
    assert main(["bench-repr", "--gripper", "planar2", "--frames", "2", "--config", small_cfg,
                 "--out", str(out)]) == 0
    assert len(json.loads(out.read_text())["result"]["rows"]) == 2


def test_cli_in_process_repeatable(tmp_path, small_cfg):
    texts = []
    for i in range(2):
        out = tmp_path / f"r{i}.jsonl"
        assert main(["rollout", "--gripper", "planar2", "--scene", "block_on_table",
                     "--config", small_cfg, "--seed", "3", "--out", str(out)]) == 0
        texts.append([strip_timings(json.loads(l)) for l in out.read_text().splitlines()])
    assert texts[0] == texts[1]
