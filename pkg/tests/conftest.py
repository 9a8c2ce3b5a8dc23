import pytest

from kinbound.bounds import AprioriBounds
from kinbound.kernel import hard_spheres, power_law_kernel


@pytest.fixture
def hs3():
    return hard_spheres(3)


@pytest.fixture
def bkw_like_bounds():
    return AprioriBounds(rho_min=1.0, E=4.0, Eprime=3.0, H=4.3, W=1.0)


@pytest.fixture
def nc_kernel():
    return power_law_kernel(3, 0.5, 1.0, 1.0)


@pytest.fixture
def nc_bounds():
    return AprioriBounds(rho_min=1.0, E=4.0, Eprime=4.0, H=4.3, W=1.0)


ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """record(k, ok, detail): one line per acceptance criterion in the terminal summary."""
    store = request.config.stash.setdefault(ACCEPTANCE, {})

    def record(k, ok, detail):
        store[k] = f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(store[k])
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(ACCEPTANCE, {})
    if store:
        terminalreporter.section("acceptance criteria")
        for k in sorted(store):
            terminalreporter.write_line(store[k])
