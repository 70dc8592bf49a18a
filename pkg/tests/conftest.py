import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from soplab.gridmap import MapRegistry, generate_map


@pytest.fixture(scope="session")
def full_3x3():
    return generate_map(3, 3, 0.0, seed=1)


@pytest.fixture(scope="session")
def full_8x8():
    return generate_map(8, 8, 0.0, seed=1)


@pytest.fixture(scope="session")
def sparse_6x6():
    return generate_map(6, 6, 0.5, seed=7)


@pytest.fixture(scope="session")
def sparse_20x16():
    return generate_map(20, 16, 0.5, seed=11)


@pytest.fixture(scope="session")
def registry_pair(sparse_6x6):
    other = generate_map(5, 4, 0.25, seed=3, map_index=1)
    return MapRegistry([sparse_6x6, other])
