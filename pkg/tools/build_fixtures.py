"""Regenerate the fixture grippers and scenes shipped in agnograsp/data.

Run from the repository root:  python tools/build_fixtures.py
"""

from pathlib import Path

import yaml

from agnograsp.geom.mesh import box_mesh, icosphere, save_obj

DATA = Path(__file__).resolve().parents[1] / "src" / "agnograsp" / "data"


def box_link(name, size, center):
    return {"name": name, "mesh": "../meshes/unit_box.obj",
            "mesh_scale": list(size), "mesh_origin": {"xyz": list(center)}}


def finger(prefix, base_xyz, flex_axis, lengths, width, abd_limit=None,
           flex_limits=((-0.2, 1.2), (0.0, 1.4))):
    links, joints, chain = [], [], []
    parent = "palm"
    if abd_limit is not None:
        links.append({"name": f"{prefix}_knuckle"})
        joints.append({"name": f"{prefix}_abd", "type": "revolute", "parent": "palm",
                       "child": f"{prefix}_knuckle", "origin": {"xyz": list(base_xyz)},
                       "axis": [0, 0, 1], "limit": list(abd_limit)})
        chain.append(f"{prefix}_knuckle")
        parent, origin = f"{prefix}_knuckle", [0, 0, 0]
    else:
        origin = list(base_xyz)
    for i, (length, lim) in enumerate(zip(lengths, flex_limits)):
        name = f"{prefix}_l{i + 1}"
        links.append(box_link(name, (width, width, length), (0, 0, length / 2)))
        joints.append({"name": f"{prefix}_j{i + 1}", "type": "revolute", "parent": parent,
                       "child": name, "origin": {"xyz": origin}, "axis": list(flex_axis),
                       "limit": list(lim)})
        chain.append(name)
        parent, origin = name, [0, 0, length]
    kp = {"middle": {"link": chain[-1], "offset": [0, 0, 0]},
          "tip": {"link": chain[-1], "offset": [0, 0, lengths[-1]]}}
    return links, joints, chain, kp


def hand(name, palm_size, fingers, comment):
    links = [box_link("palm", palm_size, (0, 0, 0))]
    joints, chains, kps = [], [], []
    for f in fingers:
        l, j, c, k = f
        links += l
        joints += j
        chains.append(c)
        kps.append(k)
    top = palm_size[2] / 2
    return {
        "name": name,
        "description": comment,
        "units": "m",
        "links": links,
        "joints": joints,
        "fingers": chains,
        "keypoints": {"palm": {"link": "palm", "offset": [0, 0, top]}, "fingers": kps},
        "palm_frame": {"xyz": [0, 0, top]},
        "d_up": [0, 0, 1],
    }


def planar2():
    f0 = finger("f0", (-0.06, 0, 0.01), (0, 1, 0), (0.05, 0.04), 0.016,
                flex_limits=((-0.4, 0.6), (0.0, 1.0)))
    f1 = finger("f1", (0.06, 0, 0.01), (0, -1, 0), (0.05, 0.04), 0.016,
                flex_limits=((-0.4, 0.6), (0.0, 1.0)))
    return hand("planar2", (0.16, 0.03, 0.02), [f0, f1],
                "two opposed two-link fingers curling in the xz-plane")


def spatial3():
    thumb = finger("th", (0, -0.03, 0.01), (-1, 0, 0), (0.045, 0.035), 0.014, abd_limit=(-0.3, 0.3))
    f1 = finger("f1", (-0.025, 0.03, 0.01), (1, 0, 0), (0.045, 0.035), 0.014, abd_limit=(-0.3, 0.3))
    f2 = finger("f2", (0.025, 0.03, 0.01), (1, 0, 0), (0.045, 0.035), 0.014, abd_limit=(-0.3, 0.3))
    return hand("spatial3", (0.08, 0.08, 0.02), [thumb, f1, f2],
                "thumb opposing two fingers; abduction plus two flexion joints each")


def hand_k(k):
    fingers = [finger("th", (0, -0.04, 0.01), (-1, 0, 0), (0.04, 0.03), 0.012, abd_limit=(-0.2, 0.2))]
    n = k - 1
    for i in range(n):
        x = -0.03 + 0.06 * i / max(n - 1, 1) if n > 1 else 0.0
        fingers.append(finger(f"f{i + 1}", (x, 0.035, 0.01), (1, 0, 0), (0.045, 0.035), 0.012,
                              abd_limit=(-0.2, 0.2)))
    return hand(f"hand{k}", (0.09, 0.10, 0.02), fingers,
                f"{k}-finger test hand: thumb plus {n} parallel fingers")


def main():
    (DATA / "meshes").mkdir(parents=True, exist_ok=True)
    (DATA / "grippers").mkdir(parents=True, exist_ok=True)
    (DATA / "scenes").mkdir(parents=True, exist_ok=True)
    save_obj(box_mesh((1, 1, 1)), DATA / "meshes" / "unit_box.obj")
    save_obj(icosphere(0.04, 3), DATA / "meshes" / "sphere_r4cm.obj")
    save_obj(box_mesh((0.05, 0.05, 0.1)), DATA / "meshes" / "block_5x5x10cm.obj")
    for doc in (planar2(), spatial3(), hand_k(4), hand_k(5)):
        with open(DATA / "grippers" / f"{doc['name']}.yaml", "w") as fh:
            yaml.safe_dump(doc, fh, sort_keys=False, default_flow_style=None)
    scenes = {
        "sphere_on_table": {"object": {"mesh": "../meshes/sphere_r4cm.obj",
                                       "pose": {"xyz": [0, 0, 0.04]}},
                            "table": {"height": 0.0, "size": 0.6}},
        "block_on_table": {"object": {"mesh": "../meshes/block_5x5x10cm.obj",
                                      "pose": {"xyz": [0, 0, 0.05], "rpy": [0, 0, 0.3]}},
                           "table": {"height": 0.0, "size": 0.6}},
    }
    for name, doc in scenes.items():
        with open(DATA / "scenes" / f"{name}.yaml", "w") as fh:
            yaml.safe_dump(doc, fh, sort_keys=False, default_flow_style=None)


if __name__ == "__main__":
    main()
