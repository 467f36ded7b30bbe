import pytest

VERDICTS = {}


@pytest.fixture
def verdict():
    def record(number: int, ok: bool, detail: str):
        VERDICTS[number] = ("PASS" if ok else "FAIL", detail)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(VERDICTS):
        status, detail = VERDICTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {detail}")
