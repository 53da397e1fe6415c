import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from bilevelsgd.harness import synth


@pytest.fixture(scope="session")
def image_data(tmp_path_factory):
    """The desk-scale image task: 10k train / 2k test, written as IDX pairs."""
    root = tmp_path_factory.mktemp("images")
    return synth.generate_image_dataset(root)


@pytest.fixture(scope="session")
def moons_data(tmp_path_factory):
    """Small tabular CSV task for fast integration tests."""
    root = tmp_path_factory.mktemp("moons")
    return synth.generate_moons_csv(root)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
