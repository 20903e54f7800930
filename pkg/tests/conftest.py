import os

import numpy as np
import pytest

from app import create_app
from app.services import analog_core, dataset_pipeline
from config import TestConfig

DIGITS_PATH = os.path.join(os.path.dirname(__file__), '..', 'data', 'digits.csv')


@pytest.fixture
def app(tmp_path):
    class _Config(TestConfig):
        OUTPUT_DIR = str(tmp_path / 'runs')
        BASELINE_PATH = str(tmp_path / 'runs' / 'default' / 'baseline.json')
        DIGITS_PATH = os.path.abspath(DIGITS_PATH)

    app = create_app(_Config)
    yield app


@pytest.fixture
def client(app):
    return app.test_client()


@pytest.fixture
def runner(app):
    return app.test_cli_runner()


def random_layer_weights(seed=0):
    """Baseline-shaped crossbar weight matrices with bias rows, from a seeded rng."""
    rng = np.random.default_rng(seed)
    return [rng.normal(0.0, 1.0 / np.sqrt(rows), size=(rows, cols)) for rows, cols in analog_core.LAYER_DIMS]


@pytest.fixture(scope='session')
def digits():
    return dataset_pipeline.load_digits(DIGITS_PATH)


@pytest.fixture(scope='session')
def digit_arrays(digits):
    return dataset_pipeline.as_arrays(digits)


@pytest.fixture(scope='session')
def layer_weights():
    return random_layer_weights(seed=7)


@pytest.fixture(scope='session')
def circuit(layer_weights):
    return analog_core.build_circuit(layer_weights)
