import pytest

_RESULTS = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    key = (mark.args[0], mark.args[1])
    if rep.when == "call":
        _RESULTS[key] = rep.passed
    elif rep.failed:  # setup/teardown error counts as a failure
        _RESULTS[key] = False
    elif rep.when == "setup" and rep.skipped:
        _RESULTS[key] = None


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num, title in sorted(_RESULTS):
        ok = _RESULTS[(num, title)]
        verdict = "PASS" if ok else ("SKIP" if ok is None else "FAIL")
        terminalreporter.write_line(f"criterion {num} ({title}): {verdict}")
