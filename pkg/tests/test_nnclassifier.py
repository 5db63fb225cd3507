import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ptaflow import nnclassifier as nn
from ptaflow.dataset import EncodedMatrix, SplitSpec, split, synth_presence_data
from ptaflow.errors import InputError


def _matrix(X, y):
    return EncodedMatrix(
        columns=[f"F{j}" for j in range(X.shape[1])],
        rows=[tuple(int(j) for j in np.flatnonzero(r)) for r in X],
        target=np.asarray(y, dtype=float),
    )


def finite_difference_grads(params, X, y, l2, h=1e-5):
    fd = []
    for layer in params.layers:
        gw = np.zeros_like(layer.w)
        gb = np.zeros_like(layer.b)
        for arr, out in ((layer.w, gw), (layer.b, gb)):
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                ix = it.multi_index
                old = arr[ix]
                arr[ix] = old + h
                lp = nn.loss(params, (X, y), l2)
                arr[ix] = old - h
                lm = nn.loss(params, (X, y), l2)
                arr[ix] = old
                out[ix] = (lp - lm) / (2 * h)
        fd.append(nn.Layer(w=gw, b=gb))
    return fd


class TestInit:
    def test_deterministic(self):
        cfg = nn.TrainConfig(hidden_sizes=(8,), seed=4)
        p1 = nn.init_params(20, cfg)
        p2 = nn.init_params(20, cfg)
        for l1, l2 in zip(p1.layers, p2.layers):
            assert np.array_equal(l1.w, l2.w) and np.array_equal(l1.b, l2.b)

    def test_shapes(self):
        cfg = nn.TrainConfig(hidden_sizes=(8,), seed=0)
        p = nn.init_params(20, cfg)
        assert [l.w.shape for l in p.layers] == [(8, 20), (1, 8)]
        assert all(np.all(l.b == 0) for l in p.layers)

    def test_empty_hidden_gives_single_linear_layer(self):
        cfg = nn.TrainConfig(hidden_sizes=(), seed=0)
        p = nn.init_params(3, cfg)
        assert len(p.layers) == 1 and p.layers[0].w.shape == (1, 3)

    def test_glorot_bound(self):
        cfg = nn.TrainConfig(hidden_sizes=(8,), seed=1)
        p = nn.init_params(4, cfg)
        bound = math.sqrt(6.0 / (4 + 8))
        assert np.all(np.abs(p.layers[0].w) <= bound)


class TestForward:
    def test_all_zero_params_give_half(self):
        cfg = nn.TrainConfig(hidden_sizes=(4,), seed=0)
        p = nn.init_params(3, cfg)
        for layer in p.layers:
            layer.w[:] = 0.0
        assert nn.forward(p, [1.0, -2.0, 3.0]) == 0.5

    def test_linear_layer_at_zero_input(self):
        p = nn.MLPParams(layers=[nn.Layer(w=np.array([[1.0]]), b=np.zeros(1))])
        assert nn.forward(p, [0.0]) == 0.5

    def test_sigmoid_of_two(self):
        p = nn.MLPParams(layers=[nn.Layer(w=np.array([[2.0]]), b=np.zeros(1))])
        assert nn.forward(p, [1.0]) == pytest.approx(1 / (1 + math.exp(-2)), abs=1e-12)
        assert nn.forward(p, [1.0]) == pytest.approx(0.8808, abs=1e-4)

    def test_dimension_mismatch(self):
        p = nn.MLPParams(layers=[nn.Layer(w=np.array([[2.0]]), b=np.zeros(1))])
        with pytest.raises(InputError):
            nn.forward(p, [1.0, 2.0])

    @given(st.lists(st.floats(-1e6, 1e6), min_size=3, max_size=3))
    @settings(max_examples=50, deadline=None)
    def test_output_strictly_inside_unit_interval(self, x):
        cfg = nn.TrainConfig(hidden_sizes=(4,), seed=2)
        p = nn.init_params(3, cfg)
        prob = nn.forward(p, x)
        assert 0.0 < prob < 1.0


def _saturated_params():
    # one feature, huge weight: p is pinned to the clamp for |x| = 1
    return nn.MLPParams(layers=[nn.Layer(w=np.array([[1000.0]]), b=np.zeros(1))])


class TestLoss:
    def test_perfect_fit_loss_vanishes(self):
        p = _saturated_params()
        X = np.array([[1.0], [-1.0]])
        y = np.array([1.0, 0.0])
        assert nn.loss(p, (X, y)) <= 1e-11

    def test_half_probability_gives_ln2(self):
        cfg = nn.TrainConfig(hidden_sizes=(), seed=0)
        p = nn.init_params(2, cfg)
        p.layers[0].w[:] = 0.0
        X = np.array([[1.0, 0.0], [0.0, 1.0]])
        y = np.array([1.0, 0.0])
        assert nn.loss(p, (X, y)) == pytest.approx(math.log(2), abs=1e-12)

    def test_clamped_loss_is_finite_on_confident_mistake(self):
        p = _saturated_params()
        X = np.array([[-1.0]])
        y = np.array([1.0])
        value = nn.loss(p, (X, y))
        assert math.isfinite(value)
        assert value == pytest.approx(-math.log(1e-12), rel=1e-6)

    def test_empty_batch_rejected(self):
        p = _saturated_params()
        with pytest.raises(InputError):
            nn.loss(p, (np.empty((0, 1)), np.empty(0)))


class TestGrad:
    def test_matches_finite_differences(self):
        worst = 0.0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            cfg = nn.TrainConfig(hidden_sizes=(4,), seed=seed)
            params = nn.init_params(5, cfg)
            X = rng.normal(size=(6, 5))
            y = (rng.random(6) < 0.5).astype(float)
            grads = nn.grad(params, (X, y), l2_penalty=0.01)
            fd = finite_difference_grads(params, X, y, l2=0.01)
            for g, f in zip(grads, fd):
                worst = max(worst, np.max(np.abs(g.w - f.w) / (1 + np.abs(f.w))))
                worst = max(worst, np.max(np.abs(g.b - f.b) / (1 + np.abs(f.b))))
        assert worst <= 1e-5

    def test_zero_gradient_at_perfect_fit(self):
        p = _saturated_params()
        X = np.array([[1.0], [-1.0]])
        y = np.array([1.0, 0.0])
        grads = nn.grad(p, (X, y))
        assert max(np.max(np.abs(g.w)) for g in grads) <= 1e-11
        assert max(np.max(np.abs(g.b)) for g in grads) <= 1e-11

    def test_penalty_term_alone(self):
        p = _saturated_params()
        X = np.array([[1.0], [-1.0]])
        y = np.array([1.0, 0.0])
        grads = nn.grad(p, (X, y), l2_penalty=0.5)
        assert grads[0].w == pytest.approx(0.5 * p.layers[0].w, abs=1e-9)


class TestTrain:
    def test_linearly_separable(self):
        rng = np.random.default_rng(0)
        X = (rng.random((200, 2)) < 0.5).astype(float)
        y = (X[:, 0] > X[:, 1]).astype(float) * 0 + (2 * X[:, 0] - X[:, 1] > 0.5).astype(float)
        mat = _matrix(X, y)
        cfg = nn.TrainConfig(hidden_sizes=(), learning_rate=0.5, epochs=200, batch_size=32, seed=0)
        params = nn.train(mat, cfg)
        assert nn.evaluate(params, mat).accuracy >= 0.99

    def test_xor_with_one_hidden_layer(self):
        X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
        y = np.array([0.0, 1.0, 1.0, 0.0])
        mat = _matrix(X, y)
        cfg = nn.TrainConfig(hidden_sizes=(4,), learning_rate=0.5, epochs=3000, batch_size=4, seed=0)
        params = nn.train(mat, cfg)
        assert nn.evaluate(params, mat).accuracy == 1.0

    def test_bit_identical_under_seed(self):
        mat, _ = synth_presence_data(120, 6, 2, seed=5)
        cfg = nn.TrainConfig(hidden_sizes=(8,), learning_rate=0.2, epochs=15, batch_size=16, seed=3)
        p1 = nn.train(mat, cfg)
        p2 = nn.train(mat, cfg)
        for l1, l2 in zip(p1.layers, p2.layers):
            assert np.array_equal(l1.w, l2.w) and np.array_equal(l1.b, l2.b)

    def test_full_batch_loss_decreases(self):
        mat, _ = synth_presence_data(100, 5, 2, seed=8)
        X, y = mat.to_dense(), mat.target
        cfg = nn.TrainConfig(hidden_sizes=(8,), learning_rate=0.05, epochs=50, batch_size=100, seed=1)
        initial = nn.loss(nn.init_params(5, cfg), (X, y))
        final = nn.loss(nn.train(mat, cfg), (X, y))
        assert final < initial

    def test_non_binary_target_rejected(self):
        mat = _matrix(np.ones((4, 2)), [0.0, 1.0, 2.0, 0.0])
        with pytest.raises(InputError, match="binary"):
            nn.train(mat, nn.TrainConfig(batch_size=2))

    def test_batch_size_bound(self):
        mat = _matrix(np.ones((4, 2)), [0.0, 1.0, 1.0, 0.0])
        with pytest.raises(InputError, match="batch_size"):
            nn.train(mat, nn.TrainConfig(batch_size=8))


def _step_params():
    # binary feature, prediction = 1 iff x = 1
    return nn.MLPParams(layers=[nn.Layer(w=np.array([[1000.0]]), b=np.array([-500.0]))])


class TestEvaluate:
    def test_hand_confusion_matrix(self):
        p = _step_params()
        X = np.array([[1.0]] * 4 + [[0.0]] * 6)
        y = np.array([1, 1, 1, 0, 1, 1, 0, 0, 0, 0], dtype=float)
        m = nn.evaluate(p, _matrix(X, y))
        assert (m.tp, m.fp, m.tn, m.fn) == (3, 1, 4, 2)
        assert m.accuracy == pytest.approx(0.7)
        assert m.precision == pytest.approx(0.75)
        assert m.recall == pytest.approx(0.6)
        assert m.f1 == pytest.approx(2 / 3, abs=1e-4)

    def test_perfect_predictions(self):
        p = _step_params()
        X = np.array([[1.0], [0.0]])
        y = np.array([1.0, 0.0])
        m = nn.evaluate(p, _matrix(X, y))
        assert m.accuracy == 1.0 and m.f1 == 1.0

    def test_no_positives_anywhere_gives_zero_precision_and_f1(self):
        p = _step_params()
        X = np.array([[0.0], [0.0]])
        y = np.array([0.0, 0.0])
        m = nn.evaluate(p, _matrix(X, y))
        assert m.precision == 0.0 and m.f1 == 0.0

    def test_tie_probability_classifies_as_one(self):
        p = nn.MLPParams(layers=[nn.Layer(w=np.zeros((1, 1)), b=np.zeros(1))])
        X = np.array([[1.0], [0.0]])
        y = np.array([1.0, 0.0])
        m = nn.evaluate(p, _matrix(X, y))
        assert (m.tp, m.fp) == (1, 1)

    @given(st.integers(0, 40), st.integers(0, 40), st.integers(0, 40), st.integers(0, 40))
    @settings(max_examples=100, deadline=None)
    def test_metric_formulas_hold(self, tp, fp, tn, fn):
        if tp + fp + tn + fn == 0:
            return
        m = nn.Metrics.from_counts(tp, fp, tn, fn)
        assert m.accuracy == pytest.approx((tp + tn) / (tp + fp + tn + fn))
        if m.precision + m.recall > 0:
            assert m.f1 == pytest.approx(2 * m.precision * m.recall / (m.precision + m.recall))
        else:
            assert m.f1 == 0.0
        assert 0.0 <= m.f1 <= 1.0 and 0.0 <= m.accuracy <= 1.0


class TestSerialization:
    def test_round_trip(self, tmp_path):
        cfg = nn.TrainConfig(hidden_sizes=(4,), seed=7)
        p = nn.init_params(3, cfg)
        path = tmp_path / "mlp.json"
        nn.save_params(p, path)
        back = nn.load_params(path)
        assert back.hidden_activation == "relu"
        for l1, l2 in zip(p.layers, back.layers):
            assert np.array_equal(l1.w, l2.w) and np.array_equal(l1.b, l2.b)

    def test_corrupt_file(self, tmp_path):
        path = tmp_path / "mlp.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(InputError, match="corrupt"):
            nn.load_params(path)
