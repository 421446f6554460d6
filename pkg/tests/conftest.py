import numpy as np
import pytest

from vecoffload.config import ScenarioConfig

# criterion number -> (passed, detail), filled by the acceptance module
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def cfg():
    return ScenarioConfig()


@pytest.fixture
def desk_cfg():
    return ScenarioConfig(num_cvs=2, num_rsus=2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
