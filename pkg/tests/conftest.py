import numpy as np
import pytest

from tonelli import lagrangian as lg
from tonelli import segment as sg


@pytest.fixture(scope="session")
def free():
    return lg.build_family("mechanical", {"dim": 1})


@pytest.fixture(scope="session")
def pendulum():
    return lg.build_family(
        "mechanical", {"dim": 1, "potential": {"kind": "cosine", "coeff": -0.25, "wave": [1]}}
    )


@pytest.fixture(scope="session")
def forced_pendulum():
    return lg.build_family(
        "mechanical",
        {"dim": 1, "potential": {"kind": "cosine", "coeff": -0.25, "wave": [1], "forcing": 0.5}},
    )


@pytest.fixture(scope="session")
def quartic_pendulum():
    return lg.build_family(
        "quartic-tonelli",
        {"dim": 1, "scale": 0.25, "potential": {"kind": "cosine", "coeff": -0.25, "wave": [1]}},
    )


@pytest.fixture(scope="session")
def radii16():
    return sg.practical_radii(1.0 / 16, 0.25)


@pytest.fixture(scope="session")
def radii8():
    return sg.practical_radii(1.0 / 8, 0.25)


@pytest.fixture()
def rng():
    return np.random.default_rng(2024)
