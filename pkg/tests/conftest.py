import pytest

ACCEPTANCE = []


def _status(passed):
    return "SKIP" if passed is None else ("PASS" if passed else "FAIL")


@pytest.fixture
def record_criterion():
    """Register a pass/fail line for the acceptance summary (``None`` = skipped)."""

    def record(number, title, passed, detail=""):
        ACCEPTANCE.append((number, title, passed, detail))
        print(f"[criterion {number:>2}] {_status(passed)} {title} {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"{number:>2}. {_status(passed)}  {title}  {detail}")
