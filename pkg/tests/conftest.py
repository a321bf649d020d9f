import sys


def pytest_terminal_summary(terminalreporter):
    module = next((m for name, m in list(sys.modules.items()) if name.endswith("test_acceptance")), None)
    verdicts = getattr(module, "VERDICTS", {})
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for key in sorted(verdicts):
            terminalreporter.write_line(verdicts[key])
