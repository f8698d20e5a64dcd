"""Pytest configuration and shared fixtures"""

import os
import shutil
import tempfile

import numpy as np
import pytest

from fed_contrib.core.data import Dataset, gen_blobs
from fed_contrib.core.model import ModelKind, ModelSpec


@pytest.fixture(scope="session")
def test_data_dir():
    """Create a temporary directory for test data"""
    temp_dir = tempfile.mkdtemp(prefix="fed_contrib_test_")
    yield temp_dir
    shutil.rmtree(temp_dir, ignore_errors=True)


@pytest.fixture
def temp_dir():
    """Fresh temporary directory per test"""
    with tempfile.TemporaryDirectory() as directory:
        yield directory


@pytest.fixture
def logistic_spec():
    """4-class logistic regression over 3 features"""
    return ModelSpec(ModelKind.LOGISTIC, input_dim=3, num_classes=4)


@pytest.fixture
def mlp_spec():
    """4-class MLP with 5 hidden units over 3 features"""
    return ModelSpec(ModelKind.MLP, input_dim=3, num_classes=4, hidden_dim=5)


@pytest.fixture
def blob_dataset():
    """Balanced, well-separated 4-class blobs: 100 samples per class"""
    return gen_blobs(num_classes=4, input_dim=2, per_class=100, separation=6.0, seed=7)


@pytest.fixture
def tiny_dataset():
    """Six hand-written samples over two classes"""
    features = np.array([[0.0, 0.0], [0.1, 0.2], [0.2, 0.1],
                         [3.0, 3.0], [3.1, 2.9], [2.9, 3.2]])
    labels = np.array([0, 0, 0, 1, 1, 1])
    return Dataset(features, labels, num_classes=2)


def write_config(directory: str, content: str, name: str = "config.yaml") -> str:
    """Write a config file into `directory` and return its path"""
    path = os.path.join(directory, name)
    with open(path, "w", encoding="utf-8") as f:
        f.write(content)
    return path


@pytest.fixture
def minimal_config_file(temp_dir):
    """Smallest runnable experiment: 2 participants, blobs, 3 rounds of FedAvg"""
    content = f"""
participants: 2
seed: 3
output_dir: {os.path.join(temp_dir, "results")}

data:
  source: blobs
  num_classes: 2
  input_dim: 2
  per_class: 40
  separation: 6.0

training:
  rounds: 3

strategy:
  fedavg_uniform: {{}}

logging:
  directory: {os.path.join(temp_dir, "logs")}
"""
    return write_config(temp_dir, content)


@pytest.fixture
def config_writer(temp_dir):
    """Callable writing config text into the per-test temporary directory"""
    def _write(content: str, name: str = "config.yaml") -> str:
        return write_config(temp_dir, content, name)
    return _write
