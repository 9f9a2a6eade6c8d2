import pytest

# criterion number -> (passed, detail), filled by test_acceptance
VERDICTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def verdict(capsys):
    def record(n: int, ok: bool, detail: str = ""):
        VERDICTS[n] = (bool(ok), detail)
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} {detail}".rstrip())
        assert ok, detail
    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(VERDICTS):
        ok, detail = VERDICTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
