import pytest

from kglab.model import SpacetimeModel


@pytest.fixture(scope="session")
def flat():
    return SpacetimeModel.flat(mu=1.0)


@pytest.fixture(scope="session")
def decaying():
    return SpacetimeModel.from_strings(mu=2.0, c02="0.2*jap(t)^(-3)")


@pytest.fixture(scope="session")
def trapping():
    return SpacetimeModel.from_strings(mu=1.0, c02="chi2(t)")


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
