import pytest

# criterion id -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance result; a test that errors before recording shows as FAIL."""
    name = request.node.name.removeprefix("test_")
    ACCEPTANCE.setdefault(name, (False, "did not complete"))

    def record(passed: bool, detail: str) -> bool:
        ACCEPTANCE[name] = (bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE, key=lambda n: int(n.split("_")[0][2:])):
        passed, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
