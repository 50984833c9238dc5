import pytest

_LINES = {}


@pytest.fixture(scope="session")
def acceptance():
    """Record one verdict line per acceptance criterion."""

    def record(number, passed, detail):
        _LINES[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_LINES):
            terminalreporter.write_line(_LINES[number])
