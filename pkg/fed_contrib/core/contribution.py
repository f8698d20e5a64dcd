"""Contribution assessment: class-specific cosine scores, importance weights, CGSV and exact Shapley"""

from dataclasses import dataclass
from itertools import combinations
from math import factorial
from typing import Callable, Dict, FrozenSet, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed

from .data import Dataset
from .exceptions import ConfigError, InputError, ShapeError, StateError
from .metrics import evaluate
from .model import LastLayerMatrix, ModelSpec, ParamVector, average_params, weighted_sum

ZERO_NORM = 1e-12
MAX_EXACT_PARTICIPANTS = 16


@dataclass(frozen=True, eq=False)
class ContributionMatrix:
    """n x M matrix of class-specific contribution scores in [-1, 1]"""
    gamma: np.ndarray

    def __post_init__(self):
        gamma = np.array(self.gamma, dtype=np.float64)
        if gamma.ndim != 2:
            raise ShapeError(f"contribution matrix must be 2-D, got {gamma.ndim}-D")
        if np.any(gamma < -1.0) or np.any(gamma > 1.0):
            raise InputError("contribution scores must lie in [-1, 1]")
        gamma.setflags(write=False)
        object.__setattr__(self, "gamma", gamma)

    @property
    def shape(self):
        return self.gamma.shape


@dataclass(frozen=True, eq=False)
class ImportanceWeights:
    """Raw per-participant scores in [0, 1] and their simplex normalization"""
    raw: np.ndarray
    normalized: np.ndarray

    @classmethod
    def uniform(cls, n: int) -> "ImportanceWeights":
        return cls(np.full(n, 1.0 / n), np.full(n, 1.0 / n))

    def __len__(self) -> int:
        return self.normalized.shape[0]


@dataclass(frozen=True)
class EmaState:
    """Momentum-smoothed contribution matrix; empty until the first update"""
    mu: float
    smoothed: Optional[ContributionMatrix] = None
    round_count: int = 0

    def __post_init__(self):
        if not 0.0 <= self.mu < 1.0:
            raise ConfigError(f"momentum mu must lie in [0, 1), got {self.mu}")
        if (self.smoothed is None) != (self.round_count == 0):
            raise StateError("EMA state is empty exactly when no round has been folded in")


@dataclass(frozen=True, eq=False)
class ShapleyResult:
    phi: np.ndarray
    utility_calls: int
    # utility of the grand coalition
    grand_value: Optional[np.ndarray] = None


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity clamped to [-1, 1]; 0 when either vector is (near) zero"""
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if u.shape != v.shape:
        raise ShapeError(f"cosine needs equal lengths, got {u.shape[0]} and {v.shape[0]}")
    norm_u = float(np.linalg.norm(u))
    norm_v = float(np.linalg.norm(v))
    if norm_u <= ZERO_NORM or norm_v <= ZERO_NORM:
        return 0.0
    return float(np.clip(float(u @ v) / (norm_u * norm_v), -1.0, 1.0))


def cssv(last_layer_updates: Sequence[LastLayerMatrix],
         aggregate: LastLayerMatrix) -> ContributionMatrix:
    """Gamma[i][j] = cos(column j of participant i's update, column j of the aggregate)"""
    shape = aggregate.matrix.shape
    gamma = np.zeros((len(last_layer_updates), aggregate.num_classes))
    for i, update in enumerate(last_layer_updates):
        if update.matrix.shape != shape:
            raise ShapeError(
                f"participant {i} last layer is {update.matrix.shape}, aggregate is {shape}"
            )
        for j in range(aggregate.num_classes):
            gamma[i, j] = cosine(update.column(j), aggregate.column(j))
    return ContributionMatrix(gamma)


def importance(gamma: ContributionMatrix) -> ImportanceWeights:
    """gamma_i = mean_j (1 + Gamma_ij) / 2, normalized to the simplex"""
    raw = ((1.0 + gamma.gamma) / 2.0).mean(axis=1)
    raw = np.clip(raw, 0.0, 1.0)
    total = float(raw.sum())
    n = raw.shape[0]
    if total <= ZERO_NORM:
        return ImportanceWeights(raw, np.full(n, 1.0 / n))
    return ImportanceWeights(raw, raw / total)


def ema_update(state: EmaState, fresh: ContributionMatrix) -> EmaState:
    """Store the first matrix verbatim, blend later ones as mu * old + (1 - mu) * fresh"""
    if state.smoothed is None:
        return EmaState(state.mu, fresh, 1)
    if state.smoothed.shape != fresh.shape:
        raise StateError(
            f"contribution matrix changed shape from {state.smoothed.shape} to {fresh.shape}"
        )
    blended = state.mu * state.smoothed.gamma + (1.0 - state.mu) * fresh.gamma
    return EmaState(state.mu, ContributionMatrix(np.clip(blended, -1.0, 1.0)), state.round_count + 1)


def cgsv(full_updates: Sequence[ParamVector], aggregate: ParamVector) -> np.ndarray:
    """One cosine per participant over the whole flattened update"""
    scores = np.zeros(len(full_updates))
    for i, update in enumerate(full_updates):
        if not update.same_layout(aggregate):
            raise ShapeError(f"participant {i} update layout does not match the aggregate")
        scores[i] = cosine(update.values, aggregate.values)
    return scores


def _subset_weight(size: int, n: int) -> float:
    return factorial(size) * factorial(n - size - 1) / factorial(n)


def exact_shapley(n: int, utility: Callable[[FrozenSet[int]], np.ndarray],
                  workers: int = 1) -> ShapleyResult:
    """Brute-force Shapley values over all 2^n - 1 nonempty coalitions.

    The utility may return a scalar or an M-vector; it is evaluated once per
    coalition (optionally on several threads) and the value of the empty
    coalition is taken as zero. Marginal contributions are summed in a fixed
    coalition order so the result does not depend on `workers`.
    """
    if n < 1:
        raise ConfigError(f"need at least one participant, got {n}")
    if n > MAX_EXACT_PARTICIPANTS:
        raise ConfigError(
            f"exact Shapley is capped at {MAX_EXACT_PARTICIPANTS} participants, got {n}"
        )

    coalitions = [
        frozenset(members)
        for size in range(1, n + 1)
        for members in combinations(range(n), size)
    ]
    values = Parallel(n_jobs=workers, prefer="threads")(
        delayed(utility)(coalition) for coalition in coalitions
    )
    table: Dict[FrozenSet[int], np.ndarray] = {
        coalition: np.asarray(value, dtype=np.float64)
        for coalition, value in zip(coalitions, values)
    }
    zero = np.zeros_like(table[coalitions[0]])
    table[frozenset()] = zero

    phi = np.zeros((n,) + zero.shape)
    for i in range(n):
        others = [k for k in range(n) if k != i]
        for size in range(0, n):
            weight = _subset_weight(size, n)
            for members in combinations(others, size):
                without = frozenset(members)
                phi[i] += weight * (table[without | {i}] - table[without])
    return ShapleyResult(phi, len(coalitions), table[frozenset(range(n))])


def utility_classwise_accuracy(member_updates: Sequence[ParamVector], base: ParamVector,
                               spec: ModelSpec, valset: Dataset) -> np.ndarray:
    """Per-class validation accuracy of base + the uniform mean of the members' deltas.

    Classes missing from the validation set score 0. Averaging deltas and adding
    base equals averaging the members' full parameters only when every delta was
    taken against this same base; deltas from other starting points are not
    rebased.
    """
    if len(member_updates) == 0:
        raise InputError("utility is undefined for the empty coalition")
    mean_delta = average_params(member_updates)
    model = weighted_sum([base, mean_delta], [1.0, 1.0])
    return evaluate(model, spec, valset).per_class_acc
