import numpy as np
import pytest
import torch

from neraf.dsp import StftConfig
from neraf.oracle import Pose, ShoeboxRoom, image_source_rir


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def room():
    return ShoeboxRoom((4.0, 3.0, 2.5), 0.3, max_order=6)


@pytest.fixture(scope="session")
def small_cfg():
    return StftConfig(256, 256, 64)


@pytest.fixture(scope="session")
def oracle_rir(room):
    return image_source_rir(room, Pose((1.1, 0.9, 1.2)), Pose((2.7, 2.0, 1.5)), 16000, 0.25)


# acceptance lines collected by tests/test_acceptance.py
ACCEPTANCE = {}


def record_acceptance(number: int, passed: bool, detail: str) -> str:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
