import pytest

_results: list[tuple[str, str, bool]] = []


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(label, description): acceptance criterion tests"
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None and report.when == "call":
        label, description = mark.args
        _results.append((label, description, report.passed))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for label, description, passed in _results:
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {label}: {status} - {description}")
