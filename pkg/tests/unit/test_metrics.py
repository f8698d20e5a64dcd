"""Unit tests for evaluation metrics"""

import numpy as np
import pytest

from fed_contrib.core.data import Dataset
from fed_contrib.core.exceptions import InputError, ShapeError
from fed_contrib.core.metrics import evaluate, pearson, per_class_report, predict
from fed_contrib.core.model import ModelKind, ModelSpec, ParamVector


class TestPerClassReport:
    """Test per-class recall and balanced accuracy"""

    def test_constant_classifier(self):
        """Predicting class 0 on a balanced 2-class set -> 0.5"""
        report = per_class_report(np.array([0, 0, 1, 1]), np.zeros(4), 2)
        assert report.balanced_acc == 0.5
        np.testing.assert_array_equal(report.per_class_acc, [1.0, 0.0])

    def test_perfect_classifier(self):
        labels = np.array([0, 1, 2, 2, 1])
        assert per_class_report(labels, labels, 3).balanced_acc == 1.0

    def test_hand_enumerated_confusion(self):
        """predictions (0,0,1,1) vs labels (0,1,1,1): per-class (1, 2/3), balanced 5/6"""
        report = per_class_report(np.array([0, 1, 1, 1]), np.array([0, 0, 1, 1]), 2)
        np.testing.assert_allclose(report.per_class_acc, [1.0, 2.0 / 3.0])
        assert report.balanced_acc == pytest.approx(5.0 / 6.0, abs=1e-12)
        assert report.n_eval == 4

    def test_absent_class_excluded_from_mean(self):
        """A class with no samples scores 0 but does not drag the balanced mean"""
        report = per_class_report(np.array([0, 0, 1]), np.array([0, 0, 1]), 3)
        assert report.per_class_acc[2] == 0.0
        np.testing.assert_array_equal(report.class_present, [True, True, False])
        assert report.balanced_acc == 1.0

    def test_duplicating_a_class_keeps_balanced_accuracy(self):
        labels = np.array([0, 0, 1, 1, 1])
        predictions = np.array([0, 1, 1, 0, 1])
        base = per_class_report(labels, predictions, 2).balanced_acc
        mask = labels == 1
        doubled = per_class_report(np.concatenate([labels, labels[mask]]),
                                   np.concatenate([predictions, predictions[mask]]), 2)
        assert doubled.balanced_acc == pytest.approx(base, abs=1e-12)

    def test_empty_raises(self):
        with pytest.raises(InputError):
            per_class_report(np.array([], dtype=int), np.array([], dtype=int), 2)


class TestEvaluate:
    """Test model evaluation"""

    def test_argmax_ties_go_to_lowest_class(self):
        spec = ModelSpec(ModelKind.LOGISTIC, 1, 3)
        params = ParamVector(np.zeros(6), spec)
        np.testing.assert_array_equal(predict(params, spec, np.ones((2, 1))), [0, 0])

    def test_bias_model_predicts_one_class(self):
        spec = ModelSpec(ModelKind.LOGISTIC, 1, 2)
        params = ParamVector(np.array([0.0, 0.0, 0.0, 1.0]), spec)
        data = Dataset(np.zeros((4, 1)), np.array([0, 1, 1, 1]), 2)
        report = evaluate(params, spec, data)
        np.testing.assert_array_equal(report.per_class_acc, [0.0, 1.0])
        assert report.balanced_acc == 0.5


class TestPearson:
    """Test the Pearson fairness score"""

    def test_affine_increasing(self):
        x = np.array([0.1, 0.5, 0.2, 0.9])
        result = pearson(x, 2 * x + 1)
        assert result.r == pytest.approx(1.0, abs=1e-12)
        assert not result.degenerate

    def test_negated(self):
        x = np.array([1.0, 2.0, 4.0])
        assert pearson(x, -x).r == pytest.approx(-1.0, abs=1e-12)

    def test_closed_form(self):
        """x=(1,2,3), y=(2,1,3) -> 0.5"""
        assert pearson([1, 2, 3], [2, 1, 3]).r == pytest.approx(0.5, abs=1e-12)

    def test_affine_invariance(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=6)
        y = rng.normal(size=6)
        assert pearson(3 * x + 2, 0.5 * y - 7).r == pytest.approx(pearson(x, y).r, abs=1e-12)

    def test_degenerate_variance(self):
        """Constant input -> r = 0 with the degenerate flag"""
        result = pearson([0.8, 0.8, 0.8], [0.1, 0.5, 0.9])
        assert result.r == 0.0
        assert result.degenerate

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            pearson([1, 2, 3], [1, 2])

    def test_needs_two_points(self):
        with pytest.raises(InputError):
            pearson([1.0], [2.0])
