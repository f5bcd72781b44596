import pytest

_RESULTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_RESULTS] = []


@pytest.fixture
def acceptance_report(request):
    """Record one ``criterion N: PASS/FAIL`` line; returns the pass flag."""
    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        request.config.stash[_RESULTS].append((number, line))
        return passed
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = sorted(config.stash.get(_RESULTS, []))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in lines:
            terminalreporter.write_line(line)
