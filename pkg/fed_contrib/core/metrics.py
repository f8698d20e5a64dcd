"""Evaluation metrics: per-class accuracy, balanced accuracy and the Pearson fairness score"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.metrics import confusion_matrix

from .data import Dataset
from .exceptions import InputError, ShapeError
from .model import ModelSpec, ParamVector, forward

DEGENERATE_VARIANCE = 1e-15


@dataclass(frozen=True, eq=False)
class EvalReport:
    """Per-class recall, balanced accuracy over the classes present, and sample count"""
    per_class_acc: np.ndarray
    balanced_acc: float
    n_eval: int
    class_present: np.ndarray


def per_class_report(labels: np.ndarray, predictions: np.ndarray, num_classes: int) -> EvalReport:
    """Build an EvalReport from true labels and predicted classes"""
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    if labels.shape != predictions.shape:
        raise ShapeError(f"{labels.shape[0]} labels but {predictions.shape[0]} predictions")
    if labels.size == 0:
        raise InputError("cannot evaluate on an empty dataset")

    cm = confusion_matrix(labels, predictions, labels=list(range(num_classes)))
    support = cm.sum(axis=1)
    correct = np.diag(cm)
    per_class = np.divide(
        correct, support,
        out=np.zeros(num_classes, dtype=np.float64),
        where=support > 0,
    )
    present = support > 0
    balanced = float(per_class[present].mean())
    return EvalReport(per_class, balanced, int(labels.size), present)


def predict(params: ParamVector, spec: ModelSpec, features: np.ndarray) -> np.ndarray:
    """Argmax of logits; ties resolve to the lowest class index"""
    return np.argmax(forward(params, spec, features), axis=1)


def evaluate(params: ParamVector, spec: ModelSpec, data: Dataset) -> EvalReport:
    if len(data) == 0:
        raise InputError("cannot evaluate on an empty dataset")
    return per_class_report(data.labels, predict(params, spec, data.features), spec.num_classes)


@dataclass(frozen=True)
class PearsonResult:
    r: float
    degenerate: bool


def pearson(x: Sequence[float], y: Sequence[float]) -> PearsonResult:
    """Sample Pearson correlation; 0 with degenerate=True when either variance vanishes"""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"pearson inputs differ in length: {x.shape[0]} vs {y.shape[0]}")
    if x.shape[0] < 2:
        raise InputError("pearson needs at least two observations")

    dx = x - x.mean()
    dy = y - y.mean()
    var_x = float(dx @ dx) / (x.shape[0] - 1)
    var_y = float(dy @ dy) / (y.shape[0] - 1)
    if var_x <= DEGENERATE_VARIANCE or var_y <= DEGENERATE_VARIANCE:
        return PearsonResult(0.0, True)

    r = float(dx @ dy) / np.sqrt(float(dx @ dx) * float(dy @ dy))
    return PearsonResult(float(np.clip(r, -1.0, 1.0)), False)
