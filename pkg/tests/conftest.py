import helpers


def pytest_terminal_summary(terminalreporter):
    if not helpers.ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in range(1, 10):
        if n not in helpers.ACCEPTANCE:
            tr.write_line(f"criterion {n}: NOT RUN")
            continue
        ok, title, detail = helpers.ACCEPTANCE[n]
        tr.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {title} ({detail})")
