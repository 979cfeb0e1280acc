"""
Shared fixtures for the simulator tests.
"""

from pathlib import Path

import numpy as np
import pytest

from tendonmux.hand_model import HandState, default_config

DATA_DIR = Path(__file__).resolve().parent.parent / "data"


@pytest.fixture
def config():
    """Default hand configuration."""
    return default_config()


@pytest.fixture
def exact_config(config):
    """Default configuration with perfect plug alignment."""
    return config.copy_with(alignment_error_max=0.0)


@pytest.fixture
def state(config):
    """Straight hand, spindle at position 0."""
    return HandState.initial(config)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def data_dir():
    return DATA_DIR
