import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def figure1():
    from lagspec.scenarios import FIGURE1
    return FIGURE1


@pytest.fixture(scope="session")
def figure1_analysis(figure1):
    from lagspec.spectral import analyze
    return analyze(figure1)


@pytest.fixture(scope="session")
def figure1_field(figure1):
    from lagspec.selector import basic_phase_function
    return basic_phase_function(figure1, 256)


ACCEPTANCE = pytest.StashKey[dict]()
CRITERIA = {
    1: "golden figure1 chain",
    2: "comparison suite",
    3: "Lipschitz estimate",
    4: "duality and invariance",
    5: "complex validity",
    6: "spectrality",
    7: "capacity",
    8: "cliff-wall cycle",
    9: "convergence certificate",
}


@pytest.fixture
def criterion(request):
    """``record(n, ok, detail)`` stores the outcome of acceptance criterion ``n``."""
    store = request.config.stash.setdefault(ACCEPTANCE, {})

    def record(n, ok, detail):
        store[n] = (bool(ok), detail)
        print(f"criterion {n} ({CRITERIA[n]}): {'PASS' if ok else 'FAIL'} {detail}")
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(ACCEPTANCE, None)
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in CRITERIA.items():
        if n in store:
            ok, detail = store[n]
            terminalreporter.write_line(f"[{n}] {title}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"[{n}] {title}: NOT RUN")
