"""Acceptance bookkeeping: one summary line per criterion at the end of the run."""

import pytest

_OUTCOMES: dict[str, list[tuple[str, str]]] = {}
_NOTES: dict[str, list[str]] = {}


@pytest.fixture
def note(request):
    """Attach a measured value to the criterion of the running test."""
    marker = request.node.get_closest_marker("criterion")
    label = marker.args[0] if marker else request.node.name

    def add(text: str) -> None:
        _NOTES.setdefault(label, []).append(text)

    return add


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = "xfail" if hasattr(report, "wasxfail") else report.outcome
        _OUTCOMES.setdefault(marker.args[0], []).append((item.name, status))


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_OUTCOMES, key=int):
        results = _OUTCOMES[label]
        ok = all(status == "passed" for _, status in results)
        failed = [name for name, status in results if status != "passed"]
        line = f"criterion {label}: {'PASS' if ok else 'FAIL'}"
        if failed:
            line += f" (not met: {', '.join(failed)})"
        if label in _NOTES:
            line += " | " + "; ".join(_NOTES[label])
        terminalreporter.write_line(line)
