import numpy as np
import pytest

from edgesplit.workload import build_model_spec
from edgesplit.cost import get_device
from edgesplit.network import NetworkState, MBPS, MS


@pytest.fixture
def gpt2():
    return build_model_spec("gpt2-1.5b")


@pytest.fixture
def toy():
    return build_model_spec("toy")


@pytest.fixture
def jetson():
    return get_device("jetson-orin-nx")


@pytest.fixture
def wifi():
    return NetworkState(100 * MBPS, 10 * MS, 0.0, 0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record and print one acceptance line; returns the pass flag for asserting."""

    def record(k: int, ok: bool, detail: str) -> bool:
        line = f"CRITERION {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
