"""Pytest configuration and shared fixtures for testing."""

import numpy as np
import pytest

from moistpe.cli_io.config_file import parse_config
from moistpe.models.fields import Forcing, Grids, State, forcing_preset, random_state
from moistpe.schemas.config import Config, ModelParams, StepperConfig

# Small alias-free grids keep the suite fast: n_lon >= 3L+1 and 2 n_lat >= 3L+1.
SMALL = (7, 12, 24, 8)
TINY = (5, 8, 16, 4)

SMALL_CONFIG_TEXT = """
[resolution]
L = 5
n_lat = 8
n_lon = 16
K = 4

[stepper]
dt = 0.02

[run]
spinup = 0.1
duration = 0.1
seed = 7

[ensemble]
size = 2
horizon = 0.1
gamma_samples = 4
gamma_scales = 1e-4, 1e-5

[output]
cadence = 2
"""


@pytest.fixture(scope="session")
def grids() -> Grids:
    """Alias-free L=7 grid with 8 levels."""
    return Grids.build(*SMALL)


@pytest.fixture(scope="session")
def tiny_grids() -> Grids:
    """Alias-free L=5 grid with 4 levels for ensemble work."""
    return Grids.build(*TINY)


@pytest.fixture
def params() -> ModelParams:
    return ModelParams()


@pytest.fixture
def stepper_cfg() -> StepperConfig:
    return StepperConfig(dt=0.02)


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded generator; every test gets a fresh stream."""
    return np.random.default_rng(20240917)


@pytest.fixture
def state(grids: Grids, rng: np.random.Generator) -> State:
    """Random admissible state on the small grid."""
    return random_state(grids, rng)


@pytest.fixture
def other_state(grids: Grids, rng: np.random.Generator) -> State:
    return random_state(grids, rng)


@pytest.fixture
def forcing(grids: Grids) -> Forcing:
    return forcing_preset("wave", 1.0, grids)


@pytest.fixture
def small_config_text() -> str:
    return SMALL_CONFIG_TEXT


@pytest.fixture
def small_config(small_config_text: str) -> Config:
    return parse_config(small_config_text)


@pytest.fixture
def output_dir(tmp_path):
    """Temporary artifact directory."""
    out = tmp_path / "out"
    out.mkdir()
    return out


def pytest_configure(config):
    """Configure pytest with custom markers."""
    config.addinivalue_line(
        "markers", "unit: marks tests as unit tests (deselect with '-m \"not unit\"')"
    )
    config.addinivalue_line(
        "markers",
        "integration: marks tests as integration tests (deselect with '-m \"not integration\"')",
    )
    config.addinivalue_line(
        "markers", "slow: marks tests as slow (deselect with '-m \"not slow\"')"
    )
