import pytest
from hypothesis import settings

# fixed example order so that test_output.txt is reproducible
settings.register_profile("repro", derandomize=True)
settings.load_profile("repro")

ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line for an acceptance criterion, then assert it."""

    def record(number: int, ok: bool, detail: str, seconds: float | None = None):
        timing = "" if seconds is None else f" [{seconds:.1f} s]"
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}{timing}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
