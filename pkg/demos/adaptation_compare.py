"""Train a small adaptation net on the planar gripper and compare it with
the two optimization baselines on a handful of random frames."""

import time

import numpy as np

from agnograsp.adapt import (CollisionContext, TrainConfig, init_adaptation_net,
                             sample_adaptation_batch, tracking_error, train_adaptation)
from agnograsp.fixtures import load_fixture_gripper
from agnograsp.policy import LearnedAdapter, ObIkAdapter, ObIkScAdapter

model = load_fixture_gripper("planar2")
ctx = CollisionContext.build(model)
net = init_adaptation_net(model)
res = train_adaptation(net, model, TrainConfig(updates=2000), ctx)
print(f"trained 2000 updates in {res.seconds:.0f} s, final loss {res.losses[-50:].mean():.2e}")

rng = np.random.default_rng(1)
q, kp, dp, _ = sample_adaptation_batch(model, rng, 20, ctx=ctx)
err, cmd = tracking_error(model, net, q, kp, dp)
print(f"held-out tracking error {100 * err.mean() / cmd.mean():.1f}% of the commanded norm")

for ad in (LearnedAdapter(net), ObIkAdapter(100), ObIkScAdapter(ctx, 100)):
    t0 = time.perf_counter()
    for i in range(len(q)):
        ad(model, q[i], kp[i], dp[i])
    print(f"{ad.name:9s} {1e3 * (time.perf_counter() - t0) / len(q):7.2f} ms per frame")
