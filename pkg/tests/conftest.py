import pytest

_LINES = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when != "call" or item.get_closest_marker("acceptance") is None:
        return
    label = item.get_closest_marker("acceptance").args[0]
    summary = dict(item.user_properties).get("summary", "")
    _LINES.append(f"{'PASS' if rep.passed else 'FAIL'}  {label}  {summary}".rstrip())


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
