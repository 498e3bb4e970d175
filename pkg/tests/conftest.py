import pytest

from hslab.catalog import CevParams, CirParams, ThreeHalvesParams

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def cir():
    return CirParams(a=1.0, b=1.0, sigma=1.0, q=1.0, xi=1.0)


@pytest.fixture
def three_halves():
    return ThreeHalvesParams(a=1.0, b=1.0, sigma=1.0, q=1.0, xi=1.0)


@pytest.fixture
def cev1():
    return CevParams(mu=1.0, theta=1.0, sigma=1.0, beta=0.5, q=1.0)


@pytest.fixture
def cev2():
    return CevParams(mu=1.0, theta=1.0, sigma=1.0, beta=0.5, q=1.0, variant="II")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
