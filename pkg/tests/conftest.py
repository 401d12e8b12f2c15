import pytest

_criteria: dict[int, list[tuple[str, str]]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _criteria.setdefault(marker.args[0], []).append((item.name, report.outcome))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        results = _criteria[number]
        passed = sum(outcome == "passed" for _, outcome in results)
        verdict = "PASS" if passed == len(results) else "FAIL"
        failing = [name for name, outcome in results if outcome != "passed"]
        suffix = f"; failing: {', '.join(failing)}" if failing else ""
        terminalreporter.write_line(f"criterion {number}: {verdict} ({passed}/{len(results)} tests{suffix})")
