import numpy as np
import pytest

from vmbeauty import tensor as T


@pytest.fixture
def f64():
    """Run the test at 64-bit precision with finite-output checks on."""
    with T.precision("f64"), T.checks(True):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance criteria summary ---------------------------------------------------

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(num, title): acceptance criterion a test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed):
        return
    num, title = marker.args
    entry = _CRITERIA.setdefault(num, {"title": title, "ok": True, "ran": 0, "detail": []})
    entry["ok"] = entry["ok"] and rep.passed
    entry["ran"] += rep.when == "call"
    entry["detail"].extend(v for k, v in item.user_properties if k == "detail")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        e = _CRITERIA[num]
        tag = "PASS" if e["ok"] else "FAIL"
        line = f"{tag}  {num:>2}. {e['title']} ({e['ran']} checks)"
        if e["detail"]:
            line += ": " + "; ".join(e["detail"])
        terminalreporter.write_line(line)
