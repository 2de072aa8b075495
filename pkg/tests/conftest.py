import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def record():
    """Append one pass/fail line for an acceptance criterion; printed in the terminal summary."""
    def _record(number, title, ok, detail=""):
        ACCEPTANCE_LINES.append((number, f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}  {detail}"))
        print(ACCEPTANCE_LINES[-1][1])
    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
