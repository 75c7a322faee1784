import os
import pathlib

import numpy as np
import pytest

DATA_DIR = pathlib.Path(
    os.environ.get("STE_TEST_DATA_DIR", pathlib.Path(__file__).resolve().parents[2] / "tests" / "data")
)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def data_dir():
    return DATA_DIR
