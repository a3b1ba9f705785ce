import pytest

ACCEPTANCE = {}


@pytest.fixture
def report_criterion(request):
    """Record a PASS/FAIL line for an acceptance criterion, shown in the terminal summary."""

    def record(number, passed, detail):
        ACCEPTANCE[number] = (passed, detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in range(1, max(9, max(ACCEPTANCE)) + 1):
        passed, detail = ACCEPTANCE.get(number, (False, "(no result recorded in this session)"))
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
