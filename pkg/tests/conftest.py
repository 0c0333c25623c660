import numpy as np
import pytest

from qgreybox import qcore
from qgreybox.control import PulseShapeConfig
from qgreybox.labels import DEFAULT_GATES
from qgreybox.logging import logger
from qgreybox.noise import TimeGrid


def pytest_addoption(parser):
    parser.addoption(
        "--runslow", action="store_true", default=False,
        help="run statistical and end-to-end checks"
    )


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long statistical or end-to-end check")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(autouse=True)
def quiet_logger():
    logger.set(debug=False, colored=False, syslog=False, quiet=True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def targets():
    return qcore.gate_targets(DEFAULT_GATES)


@pytest.fixture
def small_shape():
    """Coarse grid so model and simulator tests stay fast."""
    return PulseShapeConfig(grid=TimeGrid(1.0, 128))


@pytest.fixture
def haar_unitaries(rng):
    def make(count):
        z = rng.standard_normal((count, 2, 2)) + 1j * rng.standard_normal((count, 2, 2))
        q, r = np.linalg.qr(z)
        phases = np.diagonal(r, axis1=-2, axis2=-1)
        return q * (phases / np.abs(phases))[:, None, :]
    return make
