def pytest_terminal_summary(terminalreporter):
    from tests import test_acceptance as acc

    if not acc.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(acc.RESULTS):
        ok, detail = acc.RESULTS[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
