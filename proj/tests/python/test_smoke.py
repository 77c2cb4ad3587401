import math

import numpy as np
import pytest

import trajtta


def test_generate_case_is_deterministic():
    a = trajtta.generate_case(7, size=32, num_classes=3)
    b = trajtta.generate_case(7, size=32, num_classes=3)
    assert a["clean"].shape == (32, 32)
    assert a["mask"].dtype == np.int32
    np.testing.assert_array_equal(a["measurement"], b["measurement"])
    assert a["mask"].max() < 3


def test_operator_adjoint():
    rng = np.random.default_rng(0)
    for op in trajtta.operator_ids():
        x = rng.normal(size=(16, 16))
        y = trajtta.apply_operator(op, x)
        m = rng.normal(size=y.shape)
        lhs = float(np.sum(y * m))
        rhs = float(np.sum(x * trajtta.adjoint_operator(op, m)))
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)


def test_schedule_and_reconstruct():
    times = trajtta.schedule(5)
    assert times[0] == 1.0 and times[-1] == 0.0
    assert all(a > b for a, b in zip(times, times[1:]))
    case = trajtta.generate_case(3, size=16, num_classes=3)
    images, ts = trajtta.reconstruct(case["measurement"], steps=5)
    assert len(images) == 5 and ts == times
    assert images[0].shape == (16, 16)


def test_entropy_and_ensemble():
    probs = np.full((2, 2, 4), 0.25)
    np.testing.assert_allclose(trajtta.entropy(probs), math.log(4))
    onehot = np.zeros((2, 2, 4))
    onehot[..., 1] = 1.0
    out = trajtta.ensemble([probs, onehot])
    np.testing.assert_allclose(out["mean_probs"].sum(axis=-1), 1.0)
    assert (out["label_map"] == 1).all()
    assert out["entropy"].shape == (2, 2)


def test_metrics():
    pred = np.array([1, 1, 0, 0, 0, 0], dtype=np.int32)
    gt = np.array([1, 1, 1, 1, 0, 0], dtype=np.int32)
    assert trajtta.dice(pred, gt, 1) == pytest.approx(2 / 3)
    assert trajtta.dice(np.zeros(4, np.int32), np.zeros(4, np.int32), 1) is None
    assert trajtta.ece(np.ones(10), np.ones(10, np.uint8)) == 0.0
    assert trajtta.prauc([0.9, 0.1], [1, 0]) == 1.0
    assert trajtta.prauc([0.9, 0.1], [0, 0]) is None


def test_errors_map_to_python():
    with pytest.raises(trajtta.ConfigError):
        trajtta.apply_operator("bogus", np.zeros((4, 4)))
    with pytest.raises(trajtta.ShapeError):
        trajtta.apply_operator("avgpool2", np.zeros((3, 3)))
    with pytest.raises(trajtta.Error):
        trajtta.ensemble([])
