import numpy as np
import pytest

# Five cloud-hosted phishing examples: (id, brand, url)
RUNNING_EXAMPLES = [
    ("G1", "google", "https://sites.google.com/view/yaho000/home"),
    ("G2", "google", "https://sites.google.com/view/fgjdfghduhdxuxu/home"),
    ("B1", "bt", "https://dfghhgdsdf.weebly.com"),
    ("B2", "bt", "https://ofifice.weebly.com"),
    ("D1", "dhl", "https://dhmpxmsb6lk.typeform.com/to/h99lvret"),
]

# URL model scores recorded for those examples, same order
RUNNING_EXAMPLE_SCORES = [0.001, 0.043, 0.997, 0.315, 0.999]


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# ---------------------------------------------------------------------------
# acceptance reporting: tests marked criterion(n, title) roll up into one
# PASS/FAIL line per criterion at the end of the run

_criteria: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    entry = _criteria.setdefault(n, {"title": title, "ok": True, "tests": 0})
    if rep.when == "call":
        entry["tests"] += 1
    if rep.failed or (rep.when == "call" and rep.skipped):
        entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        e = _criteria[n]
        verdict = "PASS" if e["ok"] and e["tests"] else "FAIL"
        terminalreporter.write_line(f"criterion {n:2d} {verdict}  {e['title']} ({e['tests']} tests)")
