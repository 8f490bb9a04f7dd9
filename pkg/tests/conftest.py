import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

# criterion number -> [title, passed so far, ran]
_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    entry = _CRITERIA.setdefault(number, [title, True, False])
    if rep.when == "call":
        entry[2] = True
    if rep.failed or rep.skipped:
        entry[1] = False
        entry[2] = True


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok, ran = _CRITERIA[number]
        status = "PASS" if ok and ran else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {title}")
