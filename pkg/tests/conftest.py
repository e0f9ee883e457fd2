"""Prints one pass/fail line per acceptance criterion at the end of the run."""
import pytest

_RESULTS: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, name): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when != "call" and not (report.when == "setup" and report.failed):
        return
    number, name = mark.args
    detail = "; ".join(v for k, v in item.user_properties if k == "detail")
    if report.failed and not detail:
        detail = str(report.longrepr).strip().splitlines()[-1][:200]
    _RESULTS[number] = (name, "PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        name, status, detail = _RESULTS[number]
        terminalreporter.write_line(f"criterion {number:>2} {name}: {status}  {detail}")
