import numpy as np
import pytest

from ctrembed.data import SyntheticSpec, generate_synthetic, ordered_split
from ctrembed.hashing import HasherConfig, hash_dataset

PLANTED = ((0, 1, 2.0), (2, 3, 2.0), (4, 5, 2.0))


def hashed_split(spec, num_bins=2 ** 18, fraction=0.7):
    split = ordered_split(generate_synthetic(spec), fraction)
    cfg = HasherConfig(num_bins)
    return hash_dataset(split.train, cfg), hash_dataset(split.test, cfg)


@pytest.fixture(scope="session")
def planted_small():
    """60k planted-pair samples, hashed into 2^18 bins and split 70/30 in order."""
    return hashed_split(SyntheticSpec(8, 100, 60_000, PLANTED, 0.15, seed=0))


@pytest.fixture
def tiny_data():
    rng = np.random.default_rng(0)
    idx = rng.integers(0, 200, size=(300, 4))
    y = (rng.random(300) < 0.3).astype(np.int8)
    return idx, y
