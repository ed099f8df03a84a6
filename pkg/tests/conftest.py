import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")

_RESULTS = []


@pytest.fixture
def report():
    """Record one acceptance outcome for the end-of-run table."""
    def _report(number, name, ok, detail=""):
        _RESULTS.append((number, name, bool(ok), detail))
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {name} {detail}")
    return _report


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, ok, detail in sorted(_RESULTS):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number:2d}. {name}: {detail}")
