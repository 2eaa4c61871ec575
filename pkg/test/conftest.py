"""Fixtures compartidas de la batería de pruebas."""

import sys
from pathlib import Path

import numpy as np
import pytest

PROJECT_ROOT = Path(__file__).resolve().parent.parent
TEST_ROOT = Path(__file__).resolve().parent
for p in (PROJECT_ROOT, TEST_ROOT):
    if str(p) not in sys.path:
        sys.path.insert(0, str(p))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def data_dir() -> Path:
    return PROJECT_ROOT / "data" / "shapes"
