import pytest

_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def acceptance(request, capsys):
    """Record one PASS/FAIL line for an acceptance criterion.

    The line is printed immediately (outside output capture) and repeated in
    the terminal summary.
    """
    lines = request.config.stash[_ACCEPTANCE_KEY]

    def report(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        lines.append((number, line))
        with capsys.disabled():
            print(f"\n{line}")
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash[_ACCEPTANCE_KEY]
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
