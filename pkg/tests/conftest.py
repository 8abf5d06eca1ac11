import pytest

_ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """Record ``(criterion, passed, detail)`` for the end-of-run summary."""

    def record(label, passed, detail):
        _ACCEPTANCE[label] = (bool(passed), detail)
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_ACCEPTANCE, key=lambda s: (int(s.split()[1].rstrip("abcdefghijklmnopqrstuvwxyz")), s)):
        passed, detail = _ACCEPTANCE[label]
        terminalreporter.write_line(f"{label}: {'PASS' if passed else 'FAIL'} | {detail}")
