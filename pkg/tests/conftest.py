import numpy as np
import pytest

from meanfield.functional import Params
from meanfield.torus import TorusGrid

_ACCEPTANCE: dict[int, str] = {}


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    _ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def grid32():
    return TorusGrid(32)


@pytest.fixture(scope="session")
def grid64():
    return TorusGrid(64)


@pytest.fixture(scope="session")
def ref_params():
    return Params(30.0, 5.0)


@pytest.fixture(scope="session")
def ref_run(ref_params):
    from meanfield.minimax import MinimaxOptions, refine_critical, run_minimax

    grid = TorusGrid(128)
    res = run_minimax(ref_params, grid, MinimaxOptions(K=24))
    res.refined = refine_critical(res.argmax, ref_params, 1e-8)
    return res
