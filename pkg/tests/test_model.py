import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compaug.errors import BadConfig, BadLabel, ShapeMismatch
from compaug.model import (
    ReferenceModel,
    TrainConfig,
    TrainingLog,
    cawr_lr,
    cawr_position,
    cosine_annealing,
    cross_entropy,
    fit,
    gradient_check,
    init_model,
    predict_proba,
    scheduled_lr,
    softmax,
)

from helpers import array_dataset, make_window


def separable(n=200, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    x = rng.standard_normal((n, 2, 5)) * 0.3
    x[:, 0, 0] += np.where(y == 1, 2.0, -2.0)
    return array_dataset(x, y)


class TestPredictProba:
    def test_zero_weights_uniform(self, rng):
        m = init_model("softmax", (2, 5), 4, rng)
        np.testing.assert_allclose(predict_proba(m, make_window(rng.standard_normal((2, 5)))), 0.25)

    def test_two_class_logits(self):
        w = np.zeros((2, 2))
        w[0, 0] = 2.0
        m = ReferenceModel("softmax", (w, np.zeros(2)), (1, 2))
        probs = predict_proba(m, np.array([[1.0, 0.0]]))
        np.testing.assert_allclose(probs, [math.e**2 / (math.e**2 + 1), 1 / (math.e**2 + 1)])
        np.testing.assert_allclose(probs, [0.8808, 0.1192], atol=5e-5)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_simplex(self, seed):
        rng = np.random.default_rng(seed)
        m = init_model("mlp", (2, 6), 3, rng, hidden=8)
        p = m.predict_proba_array(rng.standard_normal((4, 2, 6)) * 50)
        assert np.all(p >= 0)
        np.testing.assert_allclose(p.sum(axis=1), 1.0)

    def test_shape_mismatch(self, rng):
        m = init_model("softmax", (2, 5), 3, rng)
        with pytest.raises(ShapeMismatch):
            predict_proba(m, np.zeros((2, 6)))

    def test_softmax_stable_for_huge_logits(self):
        np.testing.assert_allclose(softmax(np.array([1000.0, 0.0])), [1.0, 0.0])

    def test_bad_weight_shapes(self):
        with pytest.raises(ShapeMismatch):
            ReferenceModel("softmax", (np.zeros((2, 9)), np.zeros(2)), (2, 5))


class TestCrossEntropy:
    def test_certain(self):
        assert cross_entropy([0.0, 1.0], 1) == 0.0

    def test_uniform(self):
        assert cross_entropy([0.25] * 4, 2) == pytest.approx(1.3862943611)

    def test_clamped(self):
        value = cross_entropy([1.0, 0.0], 1)
        assert value == pytest.approx(27.631021115928547)
        assert math.isfinite(value)

    def test_bad_label(self):
        with pytest.raises(BadLabel):
            cross_entropy([0.5, 0.5], 2)


class TestSchedule:
    cfg = TrainConfig(cawr_period=10, cawr_mult=1, lr_min=1e-5)

    def test_start(self):
        assert cawr_lr(0, self.cfg) == pytest.approx(1e-3)

    def test_midpoint(self):
        assert cawr_lr(5, self.cfg) == pytest.approx((1e-3 + 1e-5) / 2)

    def test_period_endpoint(self):
        assert cosine_annealing(10, 10, 1e-3, 1e-5) == pytest.approx(1e-5)
        # integer epochs restart at t_cur = T_i, so lr_min itself is never scheduled
        assert cawr_lr(9, self.cfg) > 1e-5
        assert cawr_lr(10, self.cfg) == pytest.approx(1e-3)

    def test_periodic(self):
        assert [cawr_lr(e, self.cfg) for e in range(10)] == [cawr_lr(e + 30, self.cfg) for e in range(10)]

    def test_growing_periods(self):
        assert [cawr_position(e, 5, 2) for e in (0, 4, 5, 14, 15)] == [(0, 5), (4, 5), (0, 10), (9, 10), (0, 20)]

    def test_constant(self):
        cfg = TrainConfig(schedule="constant")
        assert {scheduled_lr(e, cfg) for e in range(100)} == {1e-3}

    @pytest.mark.parametrize("kw", [dict(lr0=0), dict(batch=0), dict(schedule="step"), dict(lr_min=1.0)])
    def test_bad_config(self, kw):
        with pytest.raises(BadConfig):
            TrainConfig(**kw)


class TestFit:
    def test_separable(self):
        data = separable()
        model, _ = fit(data, data, TrainConfig(max_epochs=500, batch=32, patience=500), kind="softmax")
        acc = np.mean(model.predict_proba_array(data.values).argmax(1) == data.labels)
        assert acc >= 0.99

    def test_stop_rule_by_construction(self):
        train = separable(40)
        val = array_dataset(np.zeros((4, 2, 5)), [0, 1, 0, 1])
        # all-zero validation inputs: the loss only moves through biases, which stay tiny and balanced
        _, log = fit(train, val, TrainConfig(max_epochs=200, patience=5), kind="softmax")
        assert log.stopped_early
        assert log.records[-1].epoch == log.best_epoch + 5

    def test_deterministic(self):
        data = separable(80)
        cfg = TrainConfig(max_epochs=5, seed=3)
        a, la = fit(data, data, cfg, kind="mlp", hidden=8)
        b, lb = fit(data, data, cfg, kind="mlp", hidden=8)
        assert a == b
        assert la.to_text() == lb.to_text()

    def test_log_round_trip(self):
        data = separable(40)
        _, log = fit(data, data, TrainConfig(max_epochs=3), kind="softmax")
        back = TrainingLog.from_text(log.to_text())
        assert back.records == log.records and back.best_epoch == log.best_epoch


class TestGradients:
    def test_softmax(self, rng):
        m = ReferenceModel("softmax", (rng.standard_normal((3, 12)) * 0.5, rng.standard_normal(3)), (2, 6))
        assert gradient_check(m, rng.standard_normal((8, 2, 6)), rng.integers(0, 3, 8)) < 1e-4

    def test_mlp(self, rng):
        m = init_model("mlp", (2, 6), 3, rng, hidden=16)
        m = ReferenceModel("mlp", (m.weights[0], rng.standard_normal(16) * 0.1, m.weights[2],
                                   rng.standard_normal(3) * 0.1), (2, 6))
        assert gradient_check(m, rng.standard_normal((8, 2, 6)), rng.integers(0, 3, 8), n_coords=300) < 1e-4

    def test_zero_model_bias_gradient(self):
        from compaug.model import _loss_and_grads

        weights = (np.zeros((3, 4)), np.zeros(3))
        _, grads = _loss_and_grads("softmax", weights, np.zeros((1, 4)), np.array([1]))
        np.testing.assert_allclose(grads[1], np.array([1 / 3, 1 / 3 - 1, 1 / 3]), atol=1e-15)
        m = ReferenceModel("softmax", weights, (1, 4))
        assert gradient_check(m, np.zeros((1, 1, 4)), [1]) < 1e-8


class TestPermutation:
    def test_channel_permutation_consistency(self, rng):
        # permuting inputs and the matching weight columns leaves predictions unchanged
        m = ReferenceModel("softmax", (rng.standard_normal((3, 8)), rng.standard_normal(3)), (2, 4))
        x = rng.standard_normal((5, 2, 4))
        perm = np.array([1, 0])
        w = m.weights[0].reshape(3, 2, 4)[:, perm].reshape(3, 8)
        m2 = ReferenceModel("softmax", (w, m.weights[1]), (2, 4))
        np.testing.assert_allclose(m.predict_proba_array(x), m2.predict_proba_array(x[:, perm]))
