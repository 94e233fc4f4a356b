import numpy as np
import pytest

from roughlsv.rough_core import TimeGrid
from roughlsv.vol_models import RoughBergomi, integrate_vol, simulate_block


@pytest.fixture(scope="session")
def fine_grid():
    return TimeGrid.uniform(2000, 1.0)


@pytest.fixture(scope="session")
def rb_spec():
    return RoughBergomi(xi0=0.235**2, eta=1.9, hurst=0.07)


@pytest.fixture(scope="session")
def rb_samples(fine_grid, rb_spec):
    """64 rough Bergomi samples on the 2000-step grid (root seed 5)."""
    return simulate_block(rb_spec, fine_grid, 5, 0) + simulate_block(rb_spec, fine_grid, 5, 1)


@pytest.fixture(scope="session")
def rb_lifts(rb_samples):
    return [integrate_vol(s) for s in rb_samples]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---------------------------------------------------------------- acceptance report

_LINES = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Append 'CRITERION n: PASS|FAIL ...' lines; they are echoed at the end of the run."""
    lines = request.config.stash.setdefault(_LINES, [])

    def log(number, ok, detail):
        line = f"CRITERION {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        lines.append(line)

    return log


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
