import numpy as np
import pytest

from rigsplat.errors import ShapeError
from rigsplat.optim import Adam, lr_schedule


def test_lr_schedule_endpoints_exact():
    assert lr_schedule(0) == 5e-3
    assert lr_schedule(60000) == 5e-3 * 0.01
    assert lr_schedule(90000) == lr_schedule(60000)  # constant after T


def test_lr_schedule_midpoint():
    # exponential interpolation: halfway in iterations is 10^-1 of the decade
    assert lr_schedule(30000) == pytest.approx(5e-4, rel=1e-12)


def test_lr_schedule_monotone():
    vals = [lr_schedule(t) for t in range(0, 70001, 500)]
    assert all(b <= a for a, b in zip(vals, vals[1:]))


def test_adam_zero_gradient_keeps_params():
    p = np.array([1.0, -2.0, 3.0])
    opt = Adam({"p": p})
    opt.step({"p": np.zeros(3)}, {"p": 0.1})
    np.testing.assert_array_equal(p, [1.0, -2.0, 3.0])
    assert opt.steps["p"] == 1


def test_adam_first_step_hand_case():
    # g=1 at step 1, lr=0.1: bias-corrected update is -0.1 / (1 + eps)
    p = np.array([0.0])
    opt = Adam({"p": p}, eps=1e-8)
    opt.step({"p": np.array([1.0])}, {"p": 0.1})
    assert p[0] == pytest.approx(-0.1 * (1.0 / (1.0 + 1e-8)), abs=1e-15)


def test_adam_matches_reference_sequence():
    # independent single-variable reference implementation
    rng = np.random.default_rng(0)
    grads = rng.normal(size=20)
    p = np.array([0.5])
    opt = Adam({"p": p}, betas=(0.9, 0.999), eps=1e-8)
    ref = 0.5
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        opt.step({"p": np.array([g])}, {"p": 0.01})
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        mh = m / (1 - 0.9**t)
        vh = v / (1 - 0.999**t)
        ref -= 0.01 * mh / (np.sqrt(vh) + 1e-8)
        assert p[0] == pytest.approx(ref, abs=1e-14)


def test_adam_determinism():
    rng = np.random.default_rng(1)
    gs = [rng.normal(size=(4, 3)) for _ in range(10)]

    def run():
        p = np.ones((4, 3))
        opt = Adam({"p": p})
        for g in gs:
            opt.step({"p": g}, {"p": 0.05})
        return p

    np.testing.assert_array_equal(run(), run())


def test_adam_shape_mismatch():
    opt = Adam({"p": np.zeros(3)})
    with pytest.raises(ShapeError):
        opt.step({"p": np.zeros(4)}, {"p": 0.1})


def test_adam_none_grad_skips_group():
    p = np.array([1.0])
    q = np.array([2.0])
    opt = Adam({"p": p, "q": q})
    opt.step({"p": np.array([1.0]), "q": None}, {"p": 0.1, "q": 0.1})
    assert q[0] == 2.0
    assert opt.steps["q"] == 0


def test_row_surgery_keeps_survivor_moments():
    p = np.arange(12, dtype=np.float64).reshape(4, 3)
    opt = Adam({"p": p})
    opt.step({"p": np.ones((4, 3))}, {"p": 0.1})
    m_before = opt.m["p"].copy()
    keep = np.array([True, False, True, True])
    new_p = np.concatenate([p[keep], np.zeros((2, 3))])
    opt.select_and_extend_rows("p", new_p, keep, 2)
    np.testing.assert_array_equal(opt.m["p"][:3], m_before[keep])
    np.testing.assert_array_equal(opt.m["p"][3:], 0.0)
    assert opt.params["p"] is new_p


def test_replace_param_resets_state():
    p = np.ones(3)
    opt = Adam({"p": p})
    opt.step({"p": np.ones(3)}, {"p": 0.1})
    new_p = np.full(3, 7.0)
    opt.replace_param("p", new_p)
    np.testing.assert_array_equal(opt.m["p"], 0.0)
    np.testing.assert_array_equal(opt.v["p"], 0.0)


def test_state_dict_roundtrip():
    p = np.ones((2, 2))
    opt = Adam({"p": p})
    opt.step({"p": np.full((2, 2), 0.3)}, {"p": 0.1})
    state = opt.state_dict()
    opt2 = Adam({"p": p.copy()})
    opt2.load_state_dict(state)
    np.testing.assert_array_equal(opt2.m["p"], opt.m["p"])
    assert opt2.steps == opt.steps
