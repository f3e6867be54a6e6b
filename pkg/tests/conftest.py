import pytest

_VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_VERDICTS] = []


@pytest.fixture
def verdict(request):
    """Record and immediately print one PASS/FAIL line for an acceptance criterion."""
    config = request.config
    reporter = config.pluginmanager.getplugin("terminalreporter")

    def record(criterion: str, ok: bool, detail: str):
        line = f"[criterion {criterion}] {'PASS' if ok else 'FAIL'}: {detail}"
        config.stash[_VERDICTS].append(line)
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
