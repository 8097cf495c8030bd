import pytest

_CRITERIA: dict[int, str] = {}


@pytest.fixture
def report():
    """Record and print a one-line verdict for an acceptance criterion."""

    def _report(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})"
        _CRITERIA[number] = line
        print(line)
        return passed

    return _report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
