import pytest

from fibemit.transport import Ion, simulate_ensemble

# one line per acceptance criterion, filled by tests/test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


_PROFILES = {}


def cached_profile(symbol, energy_kev, histories=20000, seed=11):
    key = (symbol, energy_kev, histories, seed)
    if key not in _PROFILES:
        _PROFILES[key] = simulate_ensemble(Ion.of(symbol), energy_kev, histories=histories, seed=seed)
    return _PROFILES[key]


@pytest.fixture(scope="session")
def profile_c20():
    return cached_profile("C", 20.0)


@pytest.fixture(scope="session")
def profile_c13():
    return cached_profile("C", 13.0)


@pytest.fixture(scope="session")
def profile_si40():
    return cached_profile("Si", 40.0)
