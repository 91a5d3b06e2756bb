"""
Shared fixtures for the cdlab test suite
"""

import json
import os
import sys

# Add repository root to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import numpy as np
import pytest

from src.geometry.grid import DiskGrid, grid_from_spec
from src.operators.flag import CouplingSeries, FlagSpec, build_ncfb

# Radii 0..0.6, 4 angles
SMALL_GRID = 'r=0:0.6:0.2,theta=0:360:90'
# 9 radii x 12 angles, |w| <= 0.8
ACCEPTANCE_GRID = 'r=0:0.8:0.1,theta=0:360:30'


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: acceptance-size checks (dim 4000, base_dim 48)')


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def small_grid() -> DiskGrid:
    return grid_from_spec(SMALL_GRID)


@pytest.fixture
def acceptance_grid() -> DiskGrid:
    return grid_from_spec(ACCEPTANCE_GRID)


@pytest.fixture
def flag_23():
    """2-block flag lambda = (2, 3), unit coupling"""
    return build_ncfb(FlagSpec(lambdas=(2.0, 3.0), dim_per_block=128))


@pytest.fixture
def flag_3():
    """3-block flag lambda = (2, 2.9, 3.7) with phi_13(z) = z"""
    spec = FlagSpec(
        lambdas=(2.0, 2.9, 3.7),
        couplings={(0, 2): CouplingSeries((0.0, 1.0))},
        dim_per_block=128
    )
    return build_ncfb(spec)


def write_json(path, document) -> str:
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(document, f)
    return str(path)


@pytest.fixture
def spec_file(tmp_path):
    """Factory writing a spec document to tmp_path/<name>.json"""
    def make(name: str, document: dict) -> str:
        return write_json(tmp_path / f"{name}.json", document)
    return make
