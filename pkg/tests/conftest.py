import pytest

ACCEPTANCE_LINES: dict[str, str] = {}


@pytest.fixture
def record_acceptance():
    def record(key: str, passed: bool, detail: str) -> None:
        ACCEPTANCE_LINES[key] = f"{key} {'PASS' if passed else 'FAIL'}  {detail}"
        print(ACCEPTANCE_LINES[key])
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
