def pytest_terminal_summary(terminalreporter):
    try:
        from tests.test_acceptance import RESULTS
    except ImportError:
        import sys

        mod = sys.modules.get("test_acceptance")
        RESULTS = getattr(mod, "RESULTS", [])
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
