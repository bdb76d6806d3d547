import re

_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    m = re.search(r"test_criterion_(\d+)", report.nodeid)
    if not m:
        return
    number = int(m.group(1))
    if report.when == "call" or report.outcome != "passed":
        prev = _ACCEPTANCE.get(number, "PASS")
        _ACCEPTANCE[number] = "PASS" if prev == "PASS" and report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number:2d}: {_ACCEPTANCE[number]}")
    passed = sum(v == "PASS" for v in _ACCEPTANCE.values())
    terminalreporter.write_line(f"{passed}/{len(_ACCEPTANCE)} acceptance criteria pass")
