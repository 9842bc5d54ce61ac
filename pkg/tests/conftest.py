from __future__ import annotations

import pytest

_RESULTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")
    config.stash[_RESULTS] = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call":
        return
    number, title = mark.args
    detail = "; ".join(v for k, v in item.user_properties if k == "detail")
    if rep.failed and not detail:
        detail = f"error: {call.excinfo.typename}: {call.excinfo.value}"
    item.config.stash[_RESULTS].append((number, title, rep.passed, detail))


def pytest_terminal_summary(terminalreporter, config):
    results = sorted(config.stash[_RESULTS])
    if not results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number, title, passed, detail in results:
        terminalreporter.write_line(f"criterion {number} {'PASS' if passed else 'FAIL'}: {title} | {detail}")
