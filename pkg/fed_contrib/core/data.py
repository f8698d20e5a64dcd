"""Labeled datasets: synthetic blobs, CSV ingestion, stratified splits and partitioning"""

import csv
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import ConfigError, InputError, ShapeError


@dataclass(frozen=True, eq=False)
class Dataset:
    """N x d features with integer labels in [0, num_classes)"""
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        features = np.array(self.features, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64).reshape(-1)
        if features.ndim != 2:
            raise ShapeError("dataset features must be a 2-D matrix")
        if features.shape[0] != labels.shape[0]:
            raise ShapeError(
                f"{features.shape[0]} feature rows but {labels.shape[0]} labels"
            )
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise InputError(f"labels must lie in [0, {self.num_classes})")
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: Sequence[int]) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[indices], self.labels[indices], self.num_classes)


class PartitionKind(Enum):
    EQUAL = "equal"
    IMBALANCED = "imbalanced"
    CLASS_PROBABILITY = "class_probability"
    LABEL_SKEW_EXCLUSIVE = "label_skew_exclusive"


@dataclass
class PartitionSpec:
    """Declarative split of a dataset across participants"""
    kind: PartitionKind = PartitionKind.EQUAL
    # For imbalanced
    major_classes: List[int] = field(default_factory=lambda: [0])
    major_prob: float = 0.7
    major_owner: int = 0
    # For class_probability: probs[i][j] is participant i's share of class j
    probs: Optional[List[List[float]]] = None
    # For label_skew_exclusive
    exclusive_class: int = 0
    owner: int = 0


def allocation_matrix(spec: PartitionSpec, n: int, num_classes: int) -> np.ndarray:
    """n x M matrix of per-class allocation fractions; each column sums to 1"""
    if n < 1:
        raise ConfigError(f"need at least one participant, got {n}")
    equal = np.full((n, num_classes), 1.0 / n)

    if spec.kind == PartitionKind.EQUAL:
        return equal

    if spec.kind == PartitionKind.IMBALANCED:
        if not 0.0 < spec.major_prob < 1.0:
            raise ConfigError(f"major_prob must lie in (0, 1), got {spec.major_prob}")
        if not 0 <= spec.major_owner < n:
            raise ConfigError(f"major_owner {spec.major_owner} is not a participant index")
        if n < 2:
            raise ConfigError("imbalanced partitioning needs at least two participants")
        fractions = equal.copy()
        for j in spec.major_classes:
            if not 0 <= j < num_classes:
                raise ConfigError(f"major class {j} is outside [0, {num_classes})")
            fractions[:, j] = (1.0 - spec.major_prob) / (n - 1)
            fractions[spec.major_owner, j] = spec.major_prob
        return fractions

    if spec.kind == PartitionKind.LABEL_SKEW_EXCLUSIVE:
        if not 0 <= spec.exclusive_class < num_classes:
            raise ConfigError(f"exclusive_class {spec.exclusive_class} is outside [0, {num_classes})")
        if not 0 <= spec.owner < n:
            raise ConfigError(f"owner {spec.owner} is not a participant index")
        fractions = equal.copy()
        fractions[:, spec.exclusive_class] = 0.0
        fractions[spec.owner, spec.exclusive_class] = 1.0
        return fractions

    if spec.kind == PartitionKind.CLASS_PROBABILITY:
        if spec.probs is None:
            raise ConfigError("class_probability partitioning needs probs")
        try:
            fractions = np.asarray(spec.probs, dtype=np.float64)
        except (TypeError, ValueError):
            raise ConfigError("probs must be a participants x classes matrix of numbers")
        if fractions.shape != (n, num_classes):
            raise ConfigError(
                f"probs must be {n} x {num_classes} (participants x classes), got {fractions.shape}"
            )
        if np.any(fractions < 0):
            raise ConfigError("probs must be non-negative")
        sums = fractions.sum(axis=0)
        bad = np.flatnonzero(np.abs(sums - 1.0) > 1e-9)
        if bad.size:
            raise ConfigError(f"probs for class {int(bad[0])} sum to {sums[bad[0]]}, not 1")
        return fractions

    raise ConfigError(f"Unsupported partition kind: {spec.kind}")


def apportion(total: int, fractions: np.ndarray) -> np.ndarray:
    """Largest-remainder apportionment of `total` items by `fractions`"""
    quotas = fractions * total
    counts = np.floor(quotas).astype(np.int64)
    remainder = total - int(counts.sum())
    if remainder > 0:
        priority = quotas - counts
        priority[fractions <= 0] = -1.0
        order = np.argsort(-priority, kind="stable")
        counts[order[:remainder]] += 1
    return counts


def partition(data: Dataset, spec: PartitionSpec, n: int, seed: int) -> List[Dataset]:
    """Split a dataset into n disjoint shards following the partition spec"""
    fractions = allocation_matrix(spec, n, data.num_classes)
    rng = np.random.default_rng(seed)

    shard_indices: List[List[np.ndarray]] = [[] for _ in range(n)]
    for j in range(data.num_classes):
        members = rng.permutation(np.flatnonzero(data.labels == j))
        counts = apportion(members.shape[0], fractions[:, j])
        start = 0
        for i in range(n):
            shard_indices[i].append(members[start:start + counts[i]])
            start += counts[i]

    shards = []
    for parts in shard_indices:
        indices = np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)
        shards.append(data.subset(rng.permutation(indices)))
    return shards


def train_val_split(data: Dataset, fraction: float, seed: int) -> Tuple[Dataset, Dataset]:
    """Stratified carve of a validation set; every class with >= 2 samples lands in both sides"""
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"validation fraction must lie in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    val_parts = []
    train_parts = []
    for j in range(data.num_classes):
        members = rng.permutation(np.flatnonzero(data.labels == j))
        count = members.shape[0]
        take = int(round(fraction * count))
        if count >= 2:
            take = min(max(take, 1), count - 1)
        else:
            take = 0
        val_parts.append(members[:take])
        train_parts.append(members[take:])
    train = np.sort(np.concatenate(train_parts))
    val = np.sort(np.concatenate(val_parts))
    return data.subset(train), data.subset(val)


def _simplex_means(num_classes: int, input_dim: int, separation: float) -> np.ndarray:
    if input_dim >= num_classes:
        # scaled unit vectors are pairwise sqrt(2) apart
        means = np.zeros((num_classes, input_dim))
        means[:, :num_classes] = np.eye(num_classes) * (separation / np.sqrt(2.0))
    else:
        # regular polygon whose adjacent vertices are `separation` apart
        radius = separation / (2.0 * np.sin(np.pi / num_classes))
        angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
        means = np.zeros((num_classes, input_dim))
        means[:, 0] = radius * np.cos(angles)
        means[:, 1] = radius * np.sin(angles)
    return means - means.mean(axis=0)


def _random_rotation(rng: np.random.Generator, dim: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


def gen_blobs(num_classes: int, input_dim: int, per_class: int,
              separation: float, seed: int) -> Dataset:
    """Unit-covariance Gaussian clusters with pairwise mean distance >= separation"""
    if num_classes < 2:
        raise ConfigError(f"blobs need at least 2 classes, got {num_classes}")
    if input_dim < 2:
        raise ConfigError(f"blobs need input_dim >= 2, got {input_dim}")
    if per_class < 1:
        raise ConfigError(f"per_class must be >= 1, got {per_class}")
    if separation <= 0:
        raise ConfigError(f"separation must be positive, got {separation}")

    rng = np.random.default_rng(seed)
    means = _simplex_means(num_classes, input_dim, separation) @ _random_rotation(rng, input_dim).T
    features = np.concatenate([
        means[j] + rng.standard_normal((per_class, input_dim)) for j in range(num_classes)
    ])
    labels = np.repeat(np.arange(num_classes), per_class)
    return Dataset(features, labels, num_classes)


def _parse_label(value: str, row: int) -> int:
    try:
        number = float(value)
    except ValueError:
        raise InputError(f"label '{value}' is not an integer", row=row)
    if not number.is_integer() or number < 0:
        raise InputError(f"label '{value}' is not a non-negative integer", row=row)
    return int(number)


def load_csv(path: str, label_column: str = "label",
             num_classes: Optional[int] = None) -> Dataset:
    """Load a header-first CSV of decimal features and one integer label column"""
    if not os.path.exists(path):
        raise FileNotFoundError(f"Dataset file not found: {path}")

    features = []
    labels = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            raise InputError("dataset file is empty", row=1)
        header = [name.strip() for name in header]
        if label_column not in header:
            raise InputError(f"label column '{label_column}' not in header", row=1)
        label_index = header.index(label_column)

        for row_number, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise InputError(
                    f"expected {len(header)} columns, found {len(row)}", row=row_number
                )
            values = []
            for index, cell in enumerate(row):
                if index == label_index:
                    continue
                try:
                    values.append(float(cell))
                except ValueError:
                    raise InputError(
                        f"feature '{header[index]}' has non-numeric value '{cell}'",
                        row=row_number,
                    )
            features.append(values)
            labels.append(_parse_label(row[label_index].strip(), row_number))

    if not labels:
        raise InputError("dataset file has no data rows", row=2)
    inferred = max(labels) + 1
    if num_classes is None:
        num_classes = inferred
    elif num_classes < inferred:
        raise InputError(f"label {inferred - 1} exceeds num_classes {num_classes}")
    return Dataset(np.array(features), np.array(labels), num_classes)


def write_csv(data: Dataset, path: str, label_column: str = "label") -> None:
    """Write a dataset in the layout load_csv reads, 17 significant digits per feature"""
    header = [f"x{k}" for k in range(data.input_dim)] + [label_column]
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row, label in zip(data.features, data.labels):
            writer.writerow([f"{value:.17g}" for value in row] + [int(label)])


def class_histogram(data: Dataset) -> np.ndarray:
    """Per-class sample counts, length num_classes"""
    return np.bincount(data.labels, minlength=data.num_classes).astype(np.int64)
