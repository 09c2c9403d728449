import sys
from pathlib import Path

import numpy as np
import pytest

from pimpes.mesh import build_structured_triangulation, mesh_from_arrays

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"
sys.path.insert(0, str(Path(__file__).resolve().parent))


@pytest.fixture
def unit_triangle():
    return mesh_from_arrays([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])


@pytest.fixture
def two_cells():
    return build_structured_triangulation(1, 1, 1.0, 1.0)


@pytest.fixture
def four_cells():
    return build_structured_triangulation(2, 1, 2.0, 1.0)


@pytest.fixture
def small_meshes(two_cells, four_cells, unit_triangle):
    v = [[0.0, 0.0], [2.0, 0.3], [0.4, 1.7], [1.6, 1.9], [3.1, 1.2]]
    skewed = mesh_from_arrays(v, [[0, 1, 2], [1, 3, 2], [1, 4, 3]])
    return [unit_triangle, two_cells, four_cells, skewed]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
