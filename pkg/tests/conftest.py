import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

DATA_DIR = os.environ.get("TWOCULTURES_DATA_DIR", os.path.join(os.getcwd(), "data"))


def data_path(name):
    """Path to a fetched dataset CSV, or skip the test with fetch instructions."""
    path = os.path.join(DATA_DIR, name + ".csv")
    if not os.path.exists(path):
        pytest.skip(f"dataset '{name}' not fetched; run: twocultures fetch {name}")
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(0)
