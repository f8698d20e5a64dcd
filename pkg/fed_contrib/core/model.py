"""Small differentiable classifiers with flat parameter storage"""

from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import ConfigError, InputError, ShapeError


class ModelKind(Enum):
    LOGISTIC = "logistic"
    MLP = "mlp"


@dataclass(frozen=True)
class ModelSpec:
    """Architecture of a classifier: multinomial logistic regression or a one-hidden-layer MLP"""
    kind: ModelKind
    input_dim: int
    num_classes: int
    hidden_dim: Optional[int] = None

    def __post_init__(self):
        if self.input_dim < 1:
            raise ConfigError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.kind == ModelKind.MLP and (self.hidden_dim is None or self.hidden_dim < 1):
            raise ConfigError("mlp models need a positive hidden_dim")

    @property
    def feature_dim(self) -> int:
        """Width P of the embedding feeding the last linear layer"""
        if self.kind == ModelKind.MLP:
            return self.hidden_dim
        return self.input_dim


# name -> (offset, shape), in storage order
Layout = Dict[str, Tuple[int, Tuple[int, ...]]]


def layout(spec: ModelSpec) -> Layout:
    """Offsets and shapes of every weight matrix and bias vector"""
    if spec.kind == ModelKind.MLP:
        blocks = [
            ("hidden.weight", (spec.input_dim, spec.hidden_dim)),
            ("hidden.bias", (spec.hidden_dim,)),
            ("head.weight", (spec.hidden_dim, spec.num_classes)),
            ("head.bias", (spec.num_classes,)),
        ]
    else:
        blocks = [
            ("head.weight", (spec.input_dim, spec.num_classes)),
            ("head.bias", (spec.num_classes,)),
        ]

    result: Layout = {}
    offset = 0
    for name, shape in blocks:
        result[name] = (offset, shape)
        offset += int(np.prod(shape))
    return result


def param_count(spec: ModelSpec) -> int:
    """Total number of scalar parameters implied by a spec"""
    return sum(int(np.prod(shape)) for _, shape in layout(spec).values())


@dataclass(frozen=True, eq=False)
class ParamVector:
    """Flat float64 parameters; read-only once constructed"""
    values: np.ndarray
    spec: ModelSpec

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        expected = param_count(self.spec)
        if values.shape[0] != expected:
            raise ShapeError(f"expected {expected} parameters, got {values.shape[0]}")
        if not np.all(np.isfinite(values)):
            raise InputError("parameters contain NaN or Inf")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.shape[0]

    def block(self, name: str) -> np.ndarray:
        """Read-only view of one weight matrix or bias vector"""
        offset, shape = layout(self.spec)[name]
        size = int(np.prod(shape))
        return self.values[offset:offset + size].reshape(shape)

    def same_layout(self, other: "ParamVector") -> bool:
        return self.spec == other.spec


@dataclass(frozen=True, eq=False)
class LastLayerMatrix:
    """P x M weight matrix of the final linear layer, one column per class (bias excluded)"""
    matrix: np.ndarray

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=np.float64)
        if matrix.ndim != 2:
            raise ShapeError(f"last-layer matrix must be 2-D, got {matrix.ndim}-D")
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)

    @property
    def feature_dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def num_classes(self) -> int:
        return self.matrix.shape[1]

    @property
    def columns(self) -> List[np.ndarray]:
        return [self.matrix[:, j] for j in range(self.num_classes)]

    def column(self, j: int) -> np.ndarray:
        return self.matrix[:, j]


@dataclass(frozen=True, eq=False)
class Batch:
    """Mini-batch of feature rows and integer labels"""
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if features.ndim != 2:
            raise ShapeError("batch features must be a 2-D matrix")
        if features.shape[0] != labels.shape[0]:
            raise ShapeError(
                f"batch has {features.shape[0]} feature rows but {labels.shape[0]} labels"
            )
        if labels.shape[0] < 1:
            raise ShapeError("batch must contain at least one sample")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.labels.shape[0]


def init_params(spec: ModelSpec, seed: int) -> ParamVector:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases"""
    rng = np.random.default_rng(seed)
    values = np.zeros(param_count(spec), dtype=np.float64)
    for name, (offset, shape) in layout(spec).items():
        if name.endswith(".weight"):
            bound = 1.0 / np.sqrt(shape[0])
            size = int(np.prod(shape))
            values[offset:offset + size] = rng.uniform(-bound, bound, size=size)
    return ParamVector(values, spec)


def _check_params(params: ParamVector, spec: ModelSpec) -> None:
    if params.spec != spec:
        raise ShapeError(f"parameters were built for {params.spec}, not {spec}")


def _check_features(features: np.ndarray, spec: ModelSpec) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != spec.input_dim:
        raise ShapeError(
            f"features must have shape (B, {spec.input_dim}), got {features.shape}"
        )
    return features


def _embed(params: ParamVector, features: np.ndarray) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Returns the last-layer input and, for MLPs, the hidden pre-activations"""
    if params.spec.kind == ModelKind.MLP:
        pre = features @ params.block("hidden.weight") + params.block("hidden.bias")
        return np.maximum(pre, 0.0), pre
    return features, None


def forward(params: ParamVector, spec: ModelSpec, features: np.ndarray) -> np.ndarray:
    """B x M logits"""
    _check_params(params, spec)
    features = _check_features(features, spec)
    embedding, _ = _embed(params, features)
    return embedding @ params.block("head.weight") + params.block("head.bias")


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_and_grad(params: ParamVector, spec: ModelSpec, batch: Batch) -> Tuple[float, ParamVector]:
    """Mean softmax cross-entropy over the batch and its gradient"""
    _check_params(params, spec)
    features = _check_features(batch.features, spec)
    labels = batch.labels
    if labels.min() < 0 or labels.max() >= spec.num_classes:
        raise InputError(f"labels must lie in [0, {spec.num_classes})")

    size = labels.shape[0]
    embedding, pre = _embed(params, features)
    head_weight = params.block("head.weight")
    logits = embedding @ head_weight + params.block("head.bias")

    log_probs = _log_softmax(logits)
    loss = -float(log_probs[np.arange(size), labels].mean())

    # d(loss)/d(logits)
    delta = np.exp(log_probs)
    delta[np.arange(size), labels] -= 1.0
    delta /= size

    grads = {
        "head.weight": embedding.T @ delta,
        "head.bias": delta.sum(axis=0),
    }
    if spec.kind == ModelKind.MLP:
        hidden_delta = (delta @ head_weight.T) * (pre > 0.0)
        grads["hidden.weight"] = features.T @ hidden_delta
        grads["hidden.bias"] = hidden_delta.sum(axis=0)

    flat = np.zeros(param_count(spec), dtype=np.float64)
    for name, (offset, shape) in layout(spec).items():
        flat[offset:offset + int(np.prod(shape))] = grads[name].reshape(-1)
    return loss, ParamVector(flat, spec)


def sgd_step(params: ParamVector, grad: ParamVector, eta: float) -> ParamVector:
    """params - eta * grad"""
    if not params.same_layout(grad):
        raise ShapeError("gradient layout does not match parameters")
    if eta < 0:
        raise InputError(f"learning rate must be non-negative, got {eta}")
    return ParamVector(params.values - eta * grad.values, params.spec)


def extract_last_layer(params: ParamVector, spec: ModelSpec) -> LastLayerMatrix:
    _check_params(params, spec)
    return LastLayerMatrix(params.block("head.weight").copy())


def write_back_last_layer(params: ParamVector, spec: ModelSpec,
                          matrix: LastLayerMatrix) -> ParamVector:
    """Inverse of extract_last_layer: replaces the head weights, leaves everything else"""
    _check_params(params, spec)
    offset, shape = layout(spec)["head.weight"]
    if matrix.matrix.shape != shape:
        raise ShapeError(f"last-layer matrix must be {shape}, got {matrix.matrix.shape}")
    values = params.values.copy()
    values[offset:offset + int(np.prod(shape))] = matrix.matrix.reshape(-1)
    return ParamVector(values, spec)


def weighted_sum(params: Sequence[ParamVector], weights: Sequence[float]) -> ParamVector:
    """sum_i weights[i] * params[i], accumulated in list order"""
    if len(params) == 0:
        raise InputError("cannot combine an empty list of parameter vectors")
    if len(params) != len(weights):
        raise ShapeError(f"{len(params)} parameter vectors but {len(weights)} weights")
    first = params[0]
    total = np.zeros(len(first), dtype=np.float64)
    for weight, vector in zip(weights, params):
        if not vector.same_layout(first):
            raise ShapeError("parameter vectors have different layouts")
        total += float(weight) * vector.values
    return ParamVector(total, first.spec)


def average_params(params: Sequence[ParamVector]) -> ParamVector:
    """Uniform mean in list order"""
    count = len(params)
    return weighted_sum(params, np.full(count, 1.0 / max(count, 1)))


def params_delta(after: ParamVector, before: ParamVector) -> ParamVector:
    if not after.same_layout(before):
        raise ShapeError("cannot subtract parameter vectors with different layouts")
    return ParamVector(after.values - before.values, after.spec)
