import pytest

# (criterion id, title, passed, detail) rows appended by tests/test_acceptance.py
ACCEPTANCE_RESULTS: list[tuple[str, str, bool, str]] = []


@pytest.fixture
def record_criterion():
    def record(cid: str, title: str, passed: bool, detail: str = "") -> bool:
        ACCEPTANCE_RESULTS.append((cid, title, bool(passed), detail))
        return bool(passed)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for cid, title, passed, detail in sorted(ACCEPTANCE_RESULTS, key=lambda r: int(r[0])):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {cid}. {title}: {detail}")
