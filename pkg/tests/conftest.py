import pytest

_ACCEPTANCE: dict = {}


@pytest.fixture
def record_criterion():
    """Store ``(passed, detail)`` for a numbered acceptance criterion."""
    def record(key, passed, detail=""):
        prev = _ACCEPTANCE.get(key)
        if prev is not None:
            passed = passed and prev[0]
            detail = f"{prev[1]}; {detail}" if prev[1] else detail
        _ACCEPTANCE[key] = (bool(passed), detail)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE, key=lambda k: (len(str(k)), str(k))):
        ok, detail = _ACCEPTANCE[key]
        tr.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
