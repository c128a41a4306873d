"""Prints a one-line verdict per acceptance criterion at the end of the run."""
import re

_VERDICTS: dict[int, tuple[str, str]] = {}
DETAILS: dict[int, str] = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_(\d\d)_(\w+)", report.nodeid)
    if not m or report.when not in ("setup", "call"):
        return
    n = int(m.group(1))
    if report.when == "setup" and report.passed:
        return
    outcome = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
    _VERDICTS[n] = (outcome, m.group(2).replace("_", " "))


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        outcome, name = _VERDICTS[n]
        detail = DETAILS.get(n, "")
        terminalreporter.write_line(f"criterion {n:2d} {outcome}: {name}" + (f" ({detail})" if detail else ""))
