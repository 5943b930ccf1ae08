"""Smoke test for the pyc2lab extension module.

Build and run from the repository root:

    cargo build --release -p c2lab-python --features extension-module
    cp target/release/libpyc2lab.so python/pyc2lab.so
    python3 python/smoke_test.py
"""

import json
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import pyc2lab  # noqa: E402

TINY = dict(scenario="tigerclaw", map_size=16, t_max=20, units_per_group=1)


def main():
    env = pyc2lab.Scenario("tigerclaw", map_size=16, t_max=20, units_per_group=1)
    env.reset(0)
    obs = env.observations()
    assert len(obs) == 5, obs
    group, o = obs[0]
    assert o.screen_shape == [3, 16, 16]
    assert len(o.screen) == 3 * 16 * 16
    assert o.control_group[group] == 1.0

    policy = pyc2lab.Policy(seed=1, **TINY)
    logits, value = policy.forward(o)
    assert len(logits) == 8 and isinstance(value, float)
    probs = policy.probabilities(o)
    assert abs(sum(probs[:2]) - 1.0) < 1e-9

    adv = policy.perturb(o, 0.1, clamp=False)
    delta = max(abs(a - b) for a, b in zip(adv.screen + adv.nonspatial, o.screen + o.nonspatial))
    assert delta <= 0.1 + 1e-12, delta
    assert adv.action_mask == o.action_mask
    assert adv.control_group == o.control_group

    same = policy.perturb(o, 0.0)
    assert same.screen == o.screen and same.nonspatial == o.nonspatial

    assert pyc2lab.degenerate_target([0, 0, 1, 1, 0, 2, 2, 0], "per_component") == [0, 2, 5]
    assert pyc2lab.degenerate_target([0, 0, 1, 1, 0, 2, 2, 0], "whole_vector") == [5]
    print("action 0:", pyc2lab.describe_action(0))

    steps = 0
    while not env.done:
        env.step({g: 0 for g, _ in env.observations()})
        steps += 1
    assert steps <= 20

    full, partial, curve = pyc2lab.train(200, seed=3, **TINY)
    assert curve and curve[-1][0] >= 200
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "agent.ckpt")
        full.save(path)
        again = pyc2lab.Policy.load(path, **TINY)
        assert again.forward(o) == full.forward(o)
        assert again.arch_digest == full.arch_digest

    summary = json.loads(full.sweep([0.0, 0.1], episodes=3, seed=5))
    assert [c["epsilon"] for c in summary["cells"]] == [0.0, 0.1]

    mass, mean_loss, linf = full.probe(epsilon=0.1, n_samples=200, timestep=2)
    assert 0.0 <= mass <= 1.0 and linf <= 0.1 + 1e-12

    digest = pyc2lab.config_digest("seed = 4\n")
    assert len(digest) == 64
    try:
        pyc2lab.config_digest("[scenario]\nname = 'nowhere'\n")
    except ValueError:
        pass
    else:
        raise AssertionError("bad scenario accepted")

    print("pyc2lab smoke test passed")


if __name__ == "__main__":
    main()
