import pytest

_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one summary line per acceptance criterion."""

    def add(criterion: str, passed: bool, detail: str = "") -> bool:
        line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}"
        if detail:
            line += f"  ({detail})"
        _LINES.append(line)
        print(line)
        return passed

    return add


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
