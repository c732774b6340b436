import json

import numpy as np
import pytest

from agnograsp.ibs import FeatureCloud, IbsParams, sample_ibs
from agnograsp.model import BasePose, KeypointState, keypoint_state
from agnograsp.policy import (KEYPOINT_GROUP, ROT_CAP, STEP_CAP, Action, ObIkAdapter, PolicyNet,
                              bc_smoke_train, decide_stop, empty_cloud, encode_tokens,
                              init_policy, keypoint_groups, policy_forward, run_episode)
from agnograsp.rotations import make_transform

from oracles import central_diff


def small_net(seed=0):
    return init_policy(d=8, heads=2, layers=2, point_widths=(6, 8), seed=seed)


def synthetic_inputs(K, rng, n=60):
    ks = KeypointState(rng.normal(size=3), rng.normal(size=3), rng.normal(size=(K, 2, 3)))
    comp = rng.integers(K + 1, size=n)
    cloud = FeatureCloud("ibs", rng.normal(size=(n, 3)), comp, K + 1,
                         d_s=rng.random(n), d_g=rng.random(n),
                         b_s=rng.integers(2, size=n), a_g=rng.uniform(-1, 1, n))
    return ks, cloud


def permute_fingers(ks, cloud, i, j):
    """Swap fingers i and j (0-based, thumb = 0) in keypoints and IBS labels."""
    order = np.arange(ks.n_fingers)
    order[[i, j]] = order[[j, i]]
    comp = cloud.component.copy()
    a, b = cloud.component == i + 1, cloud.component == j + 1
    comp[a], comp[b] = j + 1, i + 1
    rows = np.random.default_rng(0).permutation(len(cloud))
    pc = FeatureCloud("ibs", cloud.coords[rows], comp[rows], cloud.n_components,
                      d_s=cloud.d_s[rows], d_g=cloud.d_g[rows], b_s=cloud.b_s[rows],
                      a_g=cloud.a_g[rows])
    return KeypointState(ks.r, ks.p0, ks.fingers[order]), pc, order


def test_token_count_and_group_width(hand5):
    net = small_net()
    ks, cloud = synthetic_inputs(5, np.random.default_rng(0))
    assert len(encode_tokens(net, ks, cloud)) == 13
    g = keypoint_groups(ks)
    assert g.shape == (6, KEYPOINT_GROUP)
    assert np.array_equal(g[0, 3:6], ks.r) and np.all(g[0, 6:] == 0)
    ks5 = keypoint_state(hand5, np.zeros(hand5.dof))
    assert keypoint_groups(ks5).shape[1] == 9


def test_output_arity():
    net = small_net()
    ks, cloud = synthetic_inputs(3, np.random.default_rng(1))
    a = policy_forward(net, encode_tokens(net, ks, cloud))
    assert a.vector().size == 3 * 6 + 6 + 1


@pytest.mark.parametrize("K,i,j", [(5, 1, 3), (5, 2, 4), (4, 1, 2), (3, 1, 2)])
def test_finger_permutation_equivariance(K, i, j):
    net = init_policy(d=32, heads=4, layers=2, point_widths=(16, 32), seed=K)
    rng = np.random.default_rng(K)
    ks, cloud = synthetic_inputs(K, rng, n=200)
    a = policy_forward(net, encode_tokens(net, ks, cloud))
    pks, pcloud, order = permute_fingers(ks, cloud, i, j)
    b = policy_forward(net, encode_tokens(net, pks, pcloud))
    assert np.abs(b.finger - a.finger[order]).max() <= 1e-9
    assert np.abs(b.dp - a.dp).max() <= 1e-9
    assert np.abs(b.dr - a.dr).max() <= 1e-9
    assert abs(b.a_s - a.a_s) <= 1e-9


def test_shuffled_component_rows_identical_tokens():
    net = small_net()
    ks, cloud = synthetic_inputs(4, np.random.default_rng(2))
    rows = np.random.default_rng(3).permutation(len(cloud))
    sh = FeatureCloud("ibs", cloud.coords[rows], cloud.component[rows], 5, d_s=cloud.d_s[rows],
                      d_g=cloud.d_g[rows], b_s=cloud.b_s[rows], a_g=cloud.a_g[rows])
    assert np.array_equal(encode_tokens(net, ks, cloud).matrix.data,
                          encode_tokens(net, ks, sh).matrix.data)


def test_same_parameters_k4_k5(hand4, hand5, sphere_scene):
    net = init_policy(seed=1)
    params = IbsParams(n_points=256)
    for m in (hand4, hand5):
        q = np.zeros(m.dof)
        base = BasePose([0.0, 0.0, 0.16], [np.pi, 0.0, 0.0])
        cloud = sample_ibs(sphere_scene, m, q, base, params)
        a = policy_forward(net, encode_tokens(net, keypoint_state(m, q, base), cloud))
        assert a.finger.shape == (m.n_fingers, 2, 3)
        assert np.all(np.isfinite(a.vector()))


def test_component_mismatch():
    net = small_net()
    ks, _ = synthetic_inputs(4, np.random.default_rng(4))
    _, cloud = synthetic_inputs(5, np.random.default_rng(4))
    with pytest.raises(ValueError):
        encode_tokens(net, ks, cloud)


def test_empty_component_uses_embedding():
    net = small_net()
    ks, cloud = synthetic_inputs(3, np.random.default_rng(5))
    keep = cloud.component != 2
    sub = FeatureCloud("ibs", cloud.coords[keep], cloud.component[keep], 4, d_s=cloud.d_s[keep],
                       d_g=cloud.d_g[keep], b_s=cloud.b_s[keep], a_g=cloud.a_g[keep])
    T = encode_tokens(net, ks, sub).matrix.data
    assert np.array_equal(T[4 + 2], net.store["ibs.empty_finger"].data)
    T = encode_tokens(net, ks, empty_cloud_like(4)).matrix.data
    assert np.array_equal(T[4], net.store["ibs.empty_palm"].data)
    assert np.all(np.isfinite(policy_forward(net, encode_tokens(net, ks, sub)).vector()))


def empty_cloud_like(n_comp):
    z = np.zeros(0)
    return FeatureCloud("ibs", np.zeros((0, 3)), np.zeros(0, dtype=np.int64), n_comp, z, z,
                        np.zeros(0, dtype=np.int64), z)


def test_full_gradient_fd():
    net = small_net(seed=3)
    rng = np.random.default_rng(6)
    ks, cloud = synthetic_inputs(3, rng, n=30)
    wf, wg = rng.normal(size=(3, 6)), rng.normal(size=(1, 7))

    def scalar():
        fin, glob = policy_forward(net, encode_tokens(net, ks, cloud), tensor=True)
        return (fin * wf).sum() + (glob * wg).sum()

    net.store.zero_grad()
    scalar().backward()
    names = list(net.store)
    for name in names:
        p = net.store[name]
        flat = p.data.ravel()
        pick = rng.choice(flat.size, size=min(6, flat.size), replace=False)
        base = p.data.copy()

        def f(v, pick=pick, p=p, base=base):
            d = base.copy().ravel()
            d[pick] = v
            p.data = d.reshape(base.shape)
            out = float(scalar().data)
            p.data = base
            return out
        fd = central_diff(f, flat[pick].copy(), h=1e-6)
        # unused parameters (empty-set embeddings here) get no gradient
        an = np.zeros(len(pick)) if p.grad is None else p.grad.ravel()[pick]
        err = np.abs(an - fd).max() / max(np.abs(fd).max(), np.abs(an).max(), 1e-6)
        assert err <= 1e-4, name


def test_rigid_translation_invariance(hand4, sphere_scene):
    net = small_net()
    params = IbsParams(n_points=128)
    q = np.full(hand4.dof, 0.1)
    base = BasePose([0.02, 0.0, 0.15], [np.pi, 0.0, 0.0])
    t = np.array([0.3, -0.4, 0.1])
    moved = sphere_scene.transformed(make_transform(t=t))
    a = encode_tokens(net, keypoint_state(hand4, q, base),
                      sample_ibs(sphere_scene, hand4, q, base, params)).matrix.data
    b = encode_tokens(net, keypoint_state(hand4, q, BasePose(base.translation + t, base.rotation)),
                      sample_ibs(moved, hand4, q, BasePose(base.translation + t, base.rotation),
                                 params)).matrix.data
    assert np.abs(a - b).max() <= 1e-9


def test_decide_stop():
    assert decide_stop(1.0, 3)
    assert not decide_stop(1.0, 2)
    assert not decide_stop(-1.0, 5)
    assert not decide_stop(0.0, 5)


def test_action_caps():
    a = Action(np.full((2, 2, 3), 0.1), np.array([0.0, 0.02, 0.0]), np.array([0.0, 0.0, 1.0]),
               0.3)
    c = a.capped()
    assert np.allclose(np.linalg.norm(c.finger, axis=-1), STEP_CAP)
    assert np.isclose(np.linalg.norm(c.dp), STEP_CAP)
    assert np.isclose(np.linalg.norm(c.dr), ROT_CAP)
    small = Action(np.zeros((1, 2, 3)), np.zeros(3), np.zeros(3), 0.0)
    assert np.array_equal(small.capped().vector(), small.vector())


def test_checkpoint_round_trip(tmp_path):
    net = small_net(seed=4)
    net.save(tmp_path / "p.agnn")
    back = PolicyNet.load(tmp_path / "p.agnn")
    ks, cloud = synthetic_inputs(2, np.random.default_rng(7))
    a = policy_forward(net, encode_tokens(net, ks, cloud)).vector()
    b = policy_forward(back, encode_tokens(back, ks, cloud)).vector()
    assert np.array_equal(a, b)


def test_bc_smoke_train_reduces_loss():
    net = small_net(seed=5)
    rng = np.random.default_rng(8)
    samples = []
    for K in (3, 4):
        ks, cloud = synthetic_inputs(K, rng, n=40)
        samples.append((ks, cloud, rng.normal(size=(K, 6)), rng.normal(size=7)))
    losses = bc_smoke_train(net, samples, steps=60, lr=3e-3)
    assert losses[-1] < 0.5 * losses[0]


def test_episode_records(hand4, sphere_scene):
    net = small_net()
    base = BasePose([0.0, 0.0, 0.17], [np.pi, 0.0, 0.0])
    traj = run_episode(net, ObIkAdapter(iters=10), hand4, sphere_scene, base, steps=3,
                       ibs_params=IbsParams(n_points=128))
    assert 1 <= len(traj.frames) <= 3
    for f in traj.frames:
        assert set(f) >= {"t", "q", "base", "action", "contacts", "timings_ms"}
        q = np.array(f["q"])
        assert np.all(q >= hand4.lower) and np.all(q <= hand4.upper)
    lines = traj.to_jsonl().splitlines()
    assert len(lines) == len(traj.frames)
    json.loads(lines[0])


def test_episode_far_away_uses_empty_cloud(hand4, sphere_scene):
    net = small_net()
    base = BasePose([3.0, 0.0, 3.0])
    traj = run_episode(net, ObIkAdapter(iters=5), hand4, sphere_scene, base, steps=1)
    assert traj.frames[0]["ibs_points"] == 0
    assert len(empty_cloud(hand4)) == 0
