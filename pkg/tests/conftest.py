import re

_ACCEPTANCE_PATTERN = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)")
_acceptance_reports = {}


def pytest_runtest_logreport(report):
    match = _ACCEPTANCE_PATTERN.search(report.nodeid)
    if not match:
        return
    number = int(match.group(1))
    label = match.group(2).replace("_", " ")
    # setup/teardown failures must not be masked by a passing call phase
    if report.when == "call" or report.failed:
        previous = _acceptance_reports.get(number)
        if previous is None or not previous[1].failed:
            _acceptance_reports[number] = (label, report)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_reports:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance_reports):
        label, report = _acceptance_reports[number]
        if report.failed:
            status = "FAIL"
        elif report.skipped:
            status = "SKIP"
        else:
            status = "PASS"
        terminalreporter.write_line(f"criterion {number:2d} [{status}] {label}")
