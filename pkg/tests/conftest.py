import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from trafformer import data

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_series():
    """Two sensors, twenty days, mild noise: enough windows in every split."""
    return data.impute(data.generate_synthetic(2, 20, seed=11, noise_std=1.0))


@pytest.fixture(scope="session")
def small_split(small_series):
    segs = data.SplitSpec().segments(small_series.n_steps)
    norm = data.fit_normalizer(small_series, segs["train"])
    windows = {k: data.build_windows(small_series, norm, s) for k, s in segs.items()}
    return segs, norm, windows


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---------------------------------------------------------------------------
# acceptance summary: one PASS/FAIL line per criterion at the end of the run

ACCEPTANCE_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n, title): test for acceptance criterion n")
    config.stash[ACCEPTANCE_KEY] = {}


def _record(item, report):
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    n, title = marker.args
    results = item.config.stash[ACCEPTANCE_KEY]
    ok, _, detail = results.get(n, (True, title, ""))
    if report.failed:
        ok = False
    notes = [v for k, v in report.user_properties if k == "detail"]
    if notes:
        detail = "; ".join(notes)
    results[n] = (ok, title, detail)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when == "call" or report.failed:
        _record(item, report)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(ACCEPTANCE_KEY, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, title, detail = results[n]
        line = f"AC{n:<2} {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
