import pytest

from pipesim.specs import ClusterSpec, get_hardware, get_model
from pipesim.workload import LengthDist, generate_workload


@pytest.fixture(scope="session")
def a100x4():
    return ClusterSpec(get_hardware("a100"), 4)


@pytest.fixture(scope="session")
def model32b():
    return get_model("qwen2.5-32b")


@pytest.fixture(scope="session")
def small_workload():
    return generate_workload(300, LengthDist.uniform(16, 512), LengthDist.uniform(8, 384), seed=3)


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
