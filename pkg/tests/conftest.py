import pytest


def pytest_configure(config):
    config.acceptance_lines = []


@pytest.fixture
def criterion(request):
    """Call ``criterion(number, title, failures, detail)`` once per acceptance criterion."""

    def record(number, title, failures, detail=""):
        status = "PASS" if not failures else "FAIL"
        line = f"criterion {number} [{status}] {title}" + (f": {detail}" if detail else "")
        request.config.acceptance_lines.append((number, line))
        print(line)
        for failure in failures:
            print(f"    {failure}")
        assert not failures, "; ".join(failures)

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = sorted(config.acceptance_lines)
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in lines:
            terminalreporter.write_line(line)
