"""Collects the one-line acceptance verdicts and repeats them in the terminal summary."""
import pytest

_LINES = pytest.StashKey[dict]()


@pytest.fixture
def record_criterion(request):
    """``record_criterion(number, title, passed, detail)`` prints and stores a verdict line."""
    def record(number, title, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number:>2}: {title} -- {detail}"
        print(line)
        request.config.stash.setdefault(_LINES, {})[number] = line
        return passed
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
