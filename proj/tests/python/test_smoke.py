"""Smoke tests for the python module: end-to-end sanity, not coverage."""

import math
import os
import tempfile

import dblf


def test_autodiff_round_trip():
    t = dblf.Tape()
    x = dblf.Array([2, 2], [1.0, 2.0, 3.0, 4.0], requires_grad=True)
    y = dblf.mul(t, x, x)
    loss = dblf.sum(t, y)
    t.backward(loss)
    assert x.grad == [2.0, 4.0, 6.0, 8.0]


def test_softmax_symmetry():
    t = dblf.Tape()
    x = dblf.Array([3], [0.0, 0.0, 0.0])
    y = dblf.softmax(t, x)
    assert all(abs(v - 1.0 / 3.0) < 1e-15 for v in y.data)


def test_env_rollout_and_determinism():
    env = dblf.make_env("pendulum")
    assert env.spec.state_dim == 3
    a = dblf.env_reset(env, 42)
    b = dblf.env_reset(env, 42)
    assert a == b
    traj = dblf.rollout_random(env, 50, 7)
    assert len(traj) == 50
    for i in range(len(traj.records) - 1):
        assert traj.records[i].next_state == traj.records[i + 1].state


def test_delayed_wrapper_and_tokens():
    denv = dblf.wrap("mass_spring_damper", "constant", 4, 3)
    aug = denv.reset()
    assert aug.effective_delay == 4
    ts = dblf.tokenize(aug, 4)
    assert ts.mask == [1.0, 1.0, 1.0, 1.0]
    assert ts.width == 2 + 1 + 1
    out = denv.step([0.5])
    assert not out.done
    assert out.aug.time_index == 1


def test_bounds():
    assert abs(dblf.geometric_bound(0.5, 0.1, 3) - 0.175) < 1e-15
    assert dblf.geometric_bound(1.0, 0.3, 5) == 5 * 0.3
    # point mass at delta equals the geometric bound
    assert dblf.stochastic_bound(0.9, 0.05, 1) == dblf.geometric_bound(0.9, 0.05, 1)
    assert abs(dblf.w1_empirical([0.0, 1.0], [0.0, 3.0]) - 1.0) < 1e-15
    assert dblf.normalized_return(5.0, 5.0, -3.0) == 1.0


def test_cli_theory_command():
    with tempfile.TemporaryDirectory() as tmp:
        out = os.path.join(tmp, "theory")
        rc = dblf.run_command(
            "theory", {"system": "expansive_1d", "delta_list": "1,2,4", "out": out}
        )
        assert rc == 0
        with open(os.path.join(out, "bound_report.csv")) as fh:
            lines = [ln for ln in fh.read().splitlines() if ln]
        assert len(lines) == 4  # header + 3 deltas
        # the corrupted bound trips the assertion exit code
        rc = dblf.run_command(
            "theory",
            {
                "system": "expansive_1d",
                "delta_list": "1,2,4",
                "bound_scale": "0.5",
                "out": os.path.join(tmp, "bad"),
            },
        )
        assert rc == 2


def main():
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_")]
    for test in tests:
        test()
        print(f"ok  {test.__name__}")
    print(f"{len(tests)} python smoke tests passed")


if __name__ == "__main__":
    main()
