"""Shared pytest configuration.

Prints one PASS/FAIL line per acceptance criterion (tests named
``test_criterion_*`` in test_acceptance.py) so the acceptance gate can be
read off the terminal without digging through the summary.
"""

_RESULTS = []


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    name = report.nodeid.rsplit("::", 1)[-1]
    if not name.startswith("test_criterion_"):
        return
    status = "PASS" if report.passed else "FAIL"
    _RESULTS.append((name, status))
    print(f"\n[acceptance] {name}: {status}", flush=True)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, status in _RESULTS:
        terminalreporter.write_line(f"{status}  {name}")
