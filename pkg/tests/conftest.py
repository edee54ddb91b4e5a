"""Collects acceptance verdicts and prints them at the end of the session."""

VERDICTS = {}


def record_verdict(number, title, passed, detail):
    VERDICTS[number] = (title, passed, detail)
    line = f"CRITERION {number:>2} {'PASS' if passed else 'FAIL'}: {title} ({detail})"
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(VERDICTS):
        title, passed, detail = VERDICTS[number]
        terminalreporter.write_line(f"CRITERION {number:>2} {'PASS' if passed else 'FAIL'}: {title} ({detail})")
