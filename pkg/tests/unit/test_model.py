"""Unit tests for the model core"""

import numpy as np
import pytest

from fed_contrib.core.data import gen_blobs
from fed_contrib.core.exceptions import ConfigError, InputError, ShapeError
from fed_contrib.core.model import (
    Batch, LastLayerMatrix, ModelKind, ModelSpec, ParamVector,
    average_params, extract_last_layer, forward, init_params, layout, loss_and_grad,
    param_count, params_delta, sgd_step, weighted_sum, write_back_last_layer,
)


class TestModelSpec:
    """Test ModelSpec validation and parameter layout"""

    def test_logistic_param_count(self):
        """(d + 1) * M parameters for logistic regression"""
        assert param_count(ModelSpec(ModelKind.LOGISTIC, 2, 3)) == 9

    def test_mlp_param_count(self):
        """Hidden layer plus head for the MLP"""
        spec = ModelSpec(ModelKind.MLP, input_dim=3, num_classes=4, hidden_dim=5)
        assert param_count(spec) == 3 * 5 + 5 + 5 * 4 + 4

    def test_layout_is_contiguous(self, mlp_spec):
        """Blocks follow each other without gaps"""
        offset = 0
        for _, (start, shape) in layout(mlp_spec).items():
            assert start == offset
            offset += int(np.prod(shape))
        assert offset == param_count(mlp_spec)

    def test_feature_dim(self, logistic_spec, mlp_spec):
        """Embedding width is d for logistic, hidden_dim for MLP"""
        assert logistic_spec.feature_dim == 3
        assert mlp_spec.feature_dim == 5

    def test_mlp_requires_hidden_dim(self):
        """An MLP without hidden width is a configuration error"""
        with pytest.raises(ConfigError):
            ModelSpec(ModelKind.MLP, input_dim=3, num_classes=2)

    def test_single_class_rejected(self):
        with pytest.raises(ConfigError):
            ModelSpec(ModelKind.LOGISTIC, input_dim=3, num_classes=1)


class TestParamVector:
    """Test ParamVector construction"""

    def test_wrong_length_raises(self, logistic_spec):
        """Length must match the model layout"""
        with pytest.raises(ShapeError):
            ParamVector(np.zeros(param_count(logistic_spec) + 1), logistic_spec)

    def test_non_finite_raises(self, logistic_spec):
        values = np.zeros(param_count(logistic_spec))
        values[0] = np.nan
        with pytest.raises(InputError):
            ParamVector(values, logistic_spec)

    def test_values_are_read_only(self, logistic_spec):
        """Parameters cannot be mutated in place"""
        params = init_params(logistic_spec, seed=0)
        with pytest.raises(ValueError):
            params.values[0] = 1.0


class TestForward:
    """Test forward pass"""

    def test_zero_params_give_zero_logits(self):
        """All-zero parameters, any input -> all-zero logits"""
        spec = ModelSpec(ModelKind.LOGISTIC, 2, 3)
        params = ParamVector(np.zeros(9), spec)
        logits = forward(params, spec, np.array([[1.5, -2.0], [0.3, 7.0]]))
        assert logits.shape == (2, 3)
        assert np.all(logits == 0.0)

    def test_bias_only_model(self):
        """Zero weights with bias (1, 2, 3) give logits (1, 2, 3) for every input"""
        spec = ModelSpec(ModelKind.LOGISTIC, 2, 3)
        values = np.zeros(9)
        values[6:] = [1.0, 2.0, 3.0]
        logits = forward(ParamVector(values, spec), spec, np.array([[5.0, -1.0]]))
        np.testing.assert_array_equal(logits, [[1.0, 2.0, 3.0]])

    def test_wrong_feature_width_raises(self, logistic_spec):
        params = init_params(logistic_spec, seed=0)
        with pytest.raises(ShapeError):
            forward(params, logistic_spec, np.zeros((2, 4)))

    def test_mlp_forward_shape(self, mlp_spec):
        params = init_params(mlp_spec, seed=1)
        assert forward(params, mlp_spec, np.ones((7, 3))).shape == (7, 4)

    @pytest.mark.parametrize("kind", [ModelKind.LOGISTIC, ModelKind.MLP])
    def test_matches_explicit_loops(self, kind):
        """Vectorized logits equal a plain triple-loop matmul to 1e-12"""
        rng = np.random.default_rng(11)
        spec = ModelSpec(kind, 4, 3, hidden_dim=5 if kind == ModelKind.MLP else None)
        params = ParamVector(rng.normal(size=param_count(spec)), spec)
        features = rng.normal(size=(6, 4))

        embedding = features
        if kind == ModelKind.MLP:
            w1, b1 = params.block("hidden.weight"), params.block("hidden.bias")
            embedding = np.zeros((6, 5))
            for b in range(6):
                for h in range(5):
                    total = b1[h]
                    for d in range(4):
                        total += features[b, d] * w1[d, h]
                    embedding[b, h] = max(total, 0.0)

        w2, b2 = params.block("head.weight"), params.block("head.bias")
        expected = np.zeros((6, 3))
        for b in range(6):
            for m in range(3):
                total = b2[m]
                for p in range(embedding.shape[1]):
                    total += embedding[b, p] * w2[p, m]
                expected[b, m] = total

        np.testing.assert_allclose(forward(params, spec, features), expected, rtol=0, atol=1e-12)

    def test_identity_weights_pass_input_through(self):
        """Logistic model with W = I and zero bias maps e_1 to logits e_1"""
        spec = ModelSpec(ModelKind.LOGISTIC, 3, 3)
        values = np.zeros(param_count(spec))
        values[:9] = np.eye(3).reshape(-1)
        logits = forward(ParamVector(values, spec), spec, np.array([[1.0, 0.0, 0.0]]))
        np.testing.assert_array_equal(logits, [[1.0, 0.0, 0.0]])

    @pytest.mark.parametrize("scale", [0.5, 2.0, 10.0])
    def test_positive_homogeneity_in_last_layer(self, scale):
        """Scaling bias-free logistic weights by c > 0 scales the logits by c"""
        rng = np.random.default_rng(3)
        spec = ModelSpec(ModelKind.LOGISTIC, 4, 3)
        values = np.zeros(param_count(spec))
        values[:12] = rng.normal(size=12)
        features = rng.normal(size=(5, 4))
        base = forward(ParamVector(values, spec), spec, features)
        scaled = forward(ParamVector(scale * values, spec), spec, features)
        np.testing.assert_allclose(scaled, scale * base, rtol=1e-12, atol=1e-12)


def _sample_triple(rng, kind):
    """Random spec, params and batch; MLP pre-activations are kept away from the ReLU kink"""
    input_dim = int(rng.integers(1, 5))
    num_classes = int(rng.integers(2, 5))
    batch_size = int(rng.integers(1, 6))
    if kind == ModelKind.MLP:
        spec = ModelSpec(kind, input_dim, num_classes, hidden_dim=int(rng.integers(1, 5)))
    else:
        spec = ModelSpec(kind, input_dim, num_classes)
    while True:
        params = ParamVector(rng.normal(0.0, 1.0, size=param_count(spec)), spec)
        features = rng.normal(0.0, 1.0, size=(batch_size, input_dim))
        if kind == ModelKind.MLP:
            pre = features @ params.block("hidden.weight") + params.block("hidden.bias")
            if np.min(np.abs(pre)) < 1e-3:
                continue
        break
    labels = rng.integers(0, num_classes, size=batch_size)
    return spec, params, Batch(features, labels)


class TestLossAndGrad:
    """Test cross-entropy loss and its analytic gradient"""

    def test_uniform_logits_loss_is_log_m(self):
        """All-zero parameters -> loss = ln M"""
        spec = ModelSpec(ModelKind.LOGISTIC, 2, 4)
        params = ParamVector(np.zeros(param_count(spec)), spec)
        batch = Batch(np.array([[1.0, 2.0], [-1.0, 0.5]]), np.array([0, 3]))
        loss, _ = loss_and_grad(params, spec, batch)
        assert loss == pytest.approx(np.log(4.0), abs=1e-12)

    def test_extreme_logits_stay_finite(self):
        """Large logits do not overflow thanks to max subtraction"""
        spec = ModelSpec(ModelKind.LOGISTIC, 1, 2)
        params = ParamVector(np.array([1000.0, -1000.0, 0.0, 0.0]), spec)
        loss, grad = loss_and_grad(params, spec, Batch(np.array([[1.0]]), np.array([1])))
        assert np.isfinite(loss)
        assert loss == pytest.approx(2000.0)
        assert np.all(np.isfinite(grad.values))

    def test_label_out_of_range_raises(self, logistic_spec):
        params = init_params(logistic_spec, seed=0)
        with pytest.raises(InputError):
            loss_and_grad(params, logistic_spec, Batch(np.zeros((1, 3)), np.array([4])))

    @pytest.mark.parametrize("kind", [ModelKind.LOGISTIC, ModelKind.MLP])
    def test_duplicated_batch_gives_same_loss_and_grad(self, kind):
        """Loss and gradient are batch means, so repeating every sample changes nothing"""
        spec, params, batch = _sample_triple(np.random.default_rng(8), kind)
        doubled = Batch(np.vstack([batch.features, batch.features]),
                        np.concatenate([batch.labels, batch.labels]))
        loss, grad = loss_and_grad(params, spec, batch)
        loss_doubled, grad_doubled = loss_and_grad(params, spec, doubled)
        assert loss_doubled == pytest.approx(loss, rel=1e-12, abs=1e-12)
        np.testing.assert_allclose(grad_doubled.values, grad.values, rtol=1e-12, atol=1e-12)

    def test_gradient_matches_finite_differences(self):
        """100 random triples, central differences, relative error < 1e-5 per coordinate"""
        rng = np.random.default_rng(20240501)
        step = 1e-6
        for trial in range(100):
            kind = ModelKind.MLP if trial % 2 else ModelKind.LOGISTIC
            spec, params, batch = _sample_triple(rng, kind)
            _, grad = loss_and_grad(params, spec, batch)
            for k in range(len(params)):
                plus = params.values.copy()
                minus = params.values.copy()
                plus[k] += step
                minus[k] -= step
                loss_plus, _ = loss_and_grad(ParamVector(plus, spec), spec, batch)
                loss_minus, _ = loss_and_grad(ParamVector(minus, spec), spec, batch)
                numeric = (loss_plus - loss_minus) / (2.0 * step)
                analytic = grad.values[k]
                scale = max(abs(analytic), abs(numeric), 1e-3)
                assert abs(analytic - numeric) / scale < 1e-5, (trial, k, analytic, numeric)


class TestSgdStep:
    """Test the SGD update"""

    def test_zero_learning_rate_is_identity(self, logistic_spec):
        params = init_params(logistic_spec, seed=2)
        grad = ParamVector(np.ones(len(params)), logistic_spec)
        np.testing.assert_array_equal(sgd_step(params, grad, 0.0).values, params.values)

    def test_step_arithmetic(self, logistic_spec):
        params = ParamVector(np.ones(param_count(logistic_spec)), logistic_spec)
        grad = ParamVector(np.full(len(params), 2.0), logistic_spec)
        np.testing.assert_allclose(sgd_step(params, grad, 0.25).values, 0.5)

    def test_negative_learning_rate_raises(self, logistic_spec):
        params = init_params(logistic_spec, seed=2)
        with pytest.raises(InputError):
            sgd_step(params, params, -0.1)

    def test_monotone_descent_on_quadratic(self):
        """f(w) = 0.5 * ||w - c||^2 decreases every step and converges to c"""
        spec = ModelSpec(ModelKind.LOGISTIC, 1, 2)
        target = np.array([1.0, -2.0, 0.5, 3.0])
        params = ParamVector(np.zeros(4), spec)
        losses = []
        for _ in range(60):
            residual = params.values - target
            losses.append(0.5 * float(residual @ residual))
            params = sgd_step(params, ParamVector(residual, spec), 0.1)
        assert all(b < a for a, b in zip(losses, losses[1:]))
        np.testing.assert_allclose(params.values, target, atol=1e-2)

    def test_blobs_become_separable(self):
        """Separation 10: 200 mini-batch steps reach > 95% training accuracy"""
        spec = ModelSpec(ModelKind.LOGISTIC, 2, 4)
        data = gen_blobs(4, 2, per_class=50, separation=10.0, seed=5)
        rng = np.random.default_rng(6)
        params = init_params(spec, seed=7)
        for _ in range(200):
            index = rng.choice(len(data), size=20, replace=False)
            _, grad = loss_and_grad(params, spec, Batch(data.features[index], data.labels[index]))
            params = sgd_step(params, grad, 0.1)
        predicted = np.argmax(forward(params, spec, data.features), axis=1)
        assert np.mean(predicted == data.labels) > 0.95


class TestLastLayer:
    """Test last-layer extraction and write-back"""

    def test_logistic_last_layer_is_d_by_m(self, logistic_spec):
        matrix = extract_last_layer(init_params(logistic_spec, seed=0), logistic_spec)
        assert matrix.matrix.shape == (3, 4)
        assert len(matrix.columns) == 4

    def test_mlp_last_layer_is_p_by_m(self, mlp_spec):
        matrix = extract_last_layer(init_params(mlp_spec, seed=0), mlp_spec)
        assert matrix.feature_dim == 5
        assert matrix.num_classes == 4

    def test_bias_is_excluded(self):
        """Only head.weight is extracted"""
        spec = ModelSpec(ModelKind.LOGISTIC, 2, 2)
        params = ParamVector(np.array([1.0, 2.0, 3.0, 4.0, 9.0, 9.0]), spec)
        np.testing.assert_array_equal(extract_last_layer(params, spec).matrix, [[1.0, 2.0], [3.0, 4.0]])

    def test_write_back_round_trip(self, mlp_spec):
        """Extract then write back reproduces the parameters bit for bit"""
        params = init_params(mlp_spec, seed=4)
        restored = write_back_last_layer(params, mlp_spec, extract_last_layer(params, mlp_spec))
        np.testing.assert_array_equal(restored.values, params.values)

    def test_write_back_replaces_only_head(self, mlp_spec):
        params = init_params(mlp_spec, seed=4)
        updated = write_back_last_layer(params, mlp_spec, LastLayerMatrix(np.zeros((5, 4))))
        assert np.all(updated.block("head.weight") == 0.0)
        np.testing.assert_array_equal(updated.block("hidden.weight"), params.block("hidden.weight"))

    def test_write_back_wrong_shape_raises(self, mlp_spec):
        params = init_params(mlp_spec, seed=4)
        with pytest.raises(ShapeError):
            write_back_last_layer(params, mlp_spec, LastLayerMatrix(np.zeros((3, 4))))


class TestInitAndCombine:
    """Test initialization and parameter arithmetic"""

    def test_init_is_deterministic(self, mlp_spec):
        np.testing.assert_array_equal(init_params(mlp_spec, 11).values, init_params(mlp_spec, 11).values)

    def test_init_zero_biases(self, mlp_spec):
        params = init_params(mlp_spec, 11)
        assert np.all(params.block("hidden.bias") == 0.0)
        assert np.all(params.block("head.bias") == 0.0)

    def test_weighted_sum_accumulates_in_order(self, logistic_spec):
        a = ParamVector(np.full(param_count(logistic_spec), 1.0), logistic_spec)
        b = ParamVector(np.full(param_count(logistic_spec), 3.0), logistic_spec)
        np.testing.assert_array_equal(weighted_sum([a, b], [0.5, 0.5]).values, 2.0)

    def test_weighted_sum_length_mismatch(self, logistic_spec):
        a = init_params(logistic_spec, 0)
        with pytest.raises(ShapeError):
            weighted_sum([a, a], [1.0])

    def test_weighted_sum_layout_mismatch(self, logistic_spec, mlp_spec):
        with pytest.raises(ShapeError):
            weighted_sum([init_params(logistic_spec, 0), init_params(mlp_spec, 0)], [0.5, 0.5])

    def test_average_of_one_is_identity(self, mlp_spec):
        params = init_params(mlp_spec, 5)
        np.testing.assert_array_equal(average_params([params]).values, params.values)

    def test_delta(self, logistic_spec):
        a = init_params(logistic_spec, 0)
        b = init_params(logistic_spec, 1)
        np.testing.assert_allclose(params_delta(a, b).values, a.values - b.values)
