import pytest

CRITERIA_RESULTS: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    CRITERIA_RESULTS[number] = (passed, detail)


@pytest.fixture
def criterion():
    return record_criterion


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA_RESULTS):
        passed, detail = CRITERIA_RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
