import pytest

from rank1lab import load_system


@pytest.fixture(scope="session")
def odometer():
    return load_system("odometer")


@pytest.fixture(scope="session")
def chacon():
    return load_system("chacon")


@pytest.fixture(scope="session")
def staircase():
    return load_system("flat-staircase")


@pytest.fixture(scope="session")
def flow():
    return load_system("flow-odometer")


@pytest.fixture(scope="session")
def grid():
    return load_system("grid-odometer-2", 8)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
