import numpy as np
import pytest

from kldwrm import _jacobi_py

try:
    from kldwrm import _jacobi as _jacobi_c
except ImportError:  # extension not built
    _jacobi_c = None

KERNELS = {"python": _jacobi_py.jacobi_eigh}
if _jacobi_c is not None:
    KERNELS["compiled"] = _jacobi_c.jacobi_eigh


@pytest.fixture(params=sorted(KERNELS))
def jacobi_kernel(request):
    return KERNELS[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spd(rng, d, shift=0.1):
    r = rng.standard_normal((d, d)) / np.sqrt(d)
    return r @ r.T + shift * np.eye(d)


# acceptance lines are collected here and echoed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
