import pytest

VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[VERDICTS] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it.

    A test that raises before recording still gets a FAIL line.
    """
    recorded = []

    def record(number: int, ok: bool, detail: str):
        recorded.append(number)
        request.config.stash[VERDICTS].append(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail

    yield record
    if not recorded:
        number = int(request.node.name.split("_")[1])
        request.config.stash[VERDICTS].append(f"criterion {number:2d}: FAIL  raised before completion")
