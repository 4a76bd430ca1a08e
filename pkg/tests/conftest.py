import os

# keep test runs from creating logs/ in the working tree
os.environ.setdefault("MDSL_LOG_TO_FILE", "false")
os.environ.setdefault("MDSL_LOG_LEVEL", "WARNING")

import numpy as np
import pytest

from app.schemas.experiment import ExperimentConfig, ModelArch
from app.simulation.data import make_synthetic_blobs


def small_config(**overrides) -> ExperimentConfig:
    """Desk-scale blobs experiment: 5 workers, 128-sample shards, 5 rounds."""
    base = {
        "name": "unit",
        "algorithm": "MDSL",
        "data": {
            "source": {"kind": "blobs", "num_classes": 4, "dim": 6, "n": 1600, "separation": 4.0, "seed": 3},
            "eval_size": 200,
            "test_size": 200,
            "seed": 1,
        },
        "partition": {"groups": [{"count": 5, "alpha": 0.5}], "shard_size": 128, "seed": 2},
        "swarm": {"lr_init": 0.5, "seed": 4},
        "rounds": 5,
        "epochs": 2,
        "batch_size": 32,
        "seed": 5,
    }
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            base[key] = {**base[key], **value}
        else:
            base[key] = value
    return ExperimentConfig.model_validate(base)


@pytest.fixture
def config_factory():
    return small_config


@pytest.fixture
def blobs():
    return make_synthetic_blobs(num_classes=4, dim=6, n=800, separation=4.0, seed=11)


@pytest.fixture
def linear_arch():
    return ModelArch(input_dim=6, hidden=[], num_classes=4)


@pytest.fixture
def hidden_arch():
    return ModelArch(input_dim=6, hidden=[5], num_classes=4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
