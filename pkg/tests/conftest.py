import pytest

_VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_VERDICTS] = []


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL/SKIP line for an acceptance criterion."""
    lines = request.config.stash[_VERDICTS]

    def record(number, ok, detail):
        status = ok if isinstance(ok, str) else ("PASS" if ok else "FAIL")
        line = f"{status} criterion {number}: {detail}"
        lines.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash[_VERDICTS]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
