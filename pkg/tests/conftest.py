import numpy as np
import pytest

from ramanfuse.dataset import GRID, SignalSpec, generate_synthetic
from ramanfuse.spectra import PreprocessConfig, Spectrum


@pytest.fixture(scope="session")
def small_cohort():
    return generate_synthetic(60, SignalSpec.default(), seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_spectrum(y, sid="S1", rep=0, grid=None, **kw):
    grid = GRID if grid is None else grid
    return Spectrum(sid, rep, grid, np.asarray(y, dtype=float), **kw)


@pytest.fixture
def default_pp():
    return PreprocessConfig()


# --- acceptance summary ------------------------------------------------------------

_CRITERIA: dict[int, tuple[str, bool, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (rep.when != "call" and not rep.failed):
        return
    number, title = marker.args
    detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
    _CRITERIA[number] = (title, rep.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok, detail = _CRITERIA[number]
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
