import numpy as np
import pytest

from liquidpendulum.dynamics import CoupledSystem
from liquidpendulum.grid import build_operators
from liquidpendulum.model import CavityGeometry, derive_params

# parameters with a well separated gap, used by the decay experiments
DECAY = dict(rho=1.0, mu=0.1, c_body=0.1, beta_sq=1.0)


def make_system(n=16, xi=1, rho=1.0, mu=1.0, c_body=1.0, beta_sq=1.0, **kw):
    cav = CavityGeometry(nx=n, ny=n)
    p = derive_params(rho, mu, c_body, beta_sq, cav, **kw)
    return CoupledSystem(p, xi, build_operators(cav))


@pytest.fixture(scope="session")
def ops16():
    return build_operators(CavityGeometry(nx=16, ny=16))


@pytest.fixture(scope="session")
def sys16():
    return make_system(16, 1)


@pytest.fixture(scope="session")
def sys16_minus():
    return make_system(16, -1)


@pytest.fixture(scope="session")
def decay16():
    return make_system(16, 1, **DECAY)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
