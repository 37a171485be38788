import numpy as np
import pytest

from gooed import pde


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_surrogate():
    """5x5 source-location table on the coarse grid (a few seconds)."""
    return pde.tabulate_surrogate(5)


@pytest.fixture(scope="session")
def desk_surrogate():
    """The default 17x17 table used by sensor studies."""
    return pde.tabulate_surrogate(17)


# ---------------------------------------------------------------------------
# One summary line per acceptance criterion
# ---------------------------------------------------------------------------

_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not rep.failed and not rep.skipped):
        return
    entry = _CRITERIA.setdefault(mark.args[0], {"ok": True, "ran": False, "details": []})
    entry["ran"] = entry["ran"] or rep.when == "call"
    if rep.failed or rep.skipped:
        entry["ok"] = False
    entry["details"].extend(v for k, v in item.user_properties if k == "detail" and rep.when == "call")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        status = "PASS" if e["ok"] and e["ran"] else "FAIL"
        terminalreporter.write_line(f"criterion {n:2d}: {status}  " + "; ".join(e["details"]))
