import sys


def pytest_terminal_summary(terminalreporter):
    """Print the acceptance PASS/FAIL lines after the test report."""
    module = next((m for name, m in list(sys.modules.items())
                   if name.rsplit(".", 1)[-1] == "test_acceptance"), None)
    lines = getattr(module, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
