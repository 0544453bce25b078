import numpy as np
import pytest

from farnet.config import RunConfig
from farnet.data import dataset_from_memory, generate_dataset
from farnet.model import Model, ModelConfig
from farnet.numerics import Rng
from farnet.train import batch_arrays, build_model


MICRO = dict(d=8, layers=1, heads=2, patch=4, image_size=8,
             batch_size=2, epochs=1, n_triplets=24)


@pytest.fixture(scope="session")
def micro_dataset():
    manifest, images = generate_dataset(5, 24, (0.8, 0.1, 0.1), image_size=8)
    return dataset_from_memory(manifest, images)


@pytest.fixture(scope="session")
def micro_cfg():
    return RunConfig(seed=3, **MICRO)


@pytest.fixture
def micro_model(micro_cfg, micro_dataset):
    return build_model(micro_cfg, micro_dataset)


@pytest.fixture
def micro_batch(micro_dataset):
    return batch_arrays(micro_dataset, micro_dataset.split("train")[:2])


def orthonormal_rows(b, d):
    assert b <= d
    return np.eye(d)[:b]
