import numpy as np
import pytest

from mvdamage.data import Dataset, generate_synthetic_dataset, split_dataset
from mvdamage.models import BackboneConfig, BlockSpec, ClassifierConfig, LocalizationConfig

DATASET_SEED = 3
DATASET_SIZE = 32

# 32×32 → stem/2 → /2 → /2 → 6×4×4
TINY_L = LocalizationConfig(
    backbone=BackboneConfig(
        input_size=DATASET_SIZE,
        stem_channels=4,
        stem_stride=2,
        blocks=(BlockSpec(8, 2), BlockSpec(6, 2)),
    ),
    bins=(1, 2),
)

# 32×32 → stem/2 → pool/2 → /2 → 8×4×4 per view
TINY_C = ClassifierConfig(
    backbone=BackboneConfig(
        input_size=DATASET_SIZE,
        stem_channels=4,
        stem_stride=2,
        stem_pool=True,
        blocks=(BlockSpec(8, 2),),
    ),
    hidden=(16,),
)


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False, help="run desk-scale training checks")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_l_config():
    return TINY_L


@pytest.fixture
def tiny_c_config():
    return TINY_C


@pytest.fixture(scope="session")
def dataset_root(tmp_path_factory):
    """Ten 32×32 buildings, two per damage state, split 8/1/1"""
    root = tmp_path_factory.mktemp("synthetic")
    manifest = generate_synthetic_dataset(10, (0.2,) * 5, 0.5, DATASET_SEED, root, image_size=DATASET_SIZE)
    split_dataset(manifest, seed=DATASET_SEED).write()
    return root


@pytest.fixture(scope="session")
def dataset(dataset_root):
    return Dataset.open(dataset_root)
