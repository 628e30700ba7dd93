"""Prints one PASS/FAIL line per acceptance criterion at the end of the run."""

_results: dict[int, tuple[str, list[str]]] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    marker = report.user_properties and dict(report.user_properties).get("criterion")
    if not marker:
        return
    number, title = marker
    status, failures = _results.get(number, (title, []))
    if report.outcome != "passed":
        failures.append(report.nodeid.split("::")[-1])
    _results[number] = (status, failures)


def pytest_runtest_setup(item):
    m = item.get_closest_marker("criterion")
    if m is not None:
        item.user_properties.append(("criterion", (m.args[0], m.args[1])))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_results):
        title, failures = _results[number]
        verdict = "PASS" if not failures else "FAIL (" + ", ".join(failures) + ")"
        tr.write_line(f"criterion {number}: {verdict} - {title}")
