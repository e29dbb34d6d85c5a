CRITERION_RESULTS = []


def record_criterion(name: str, passed: bool, detail: str = "") -> None:
    CRITERION_RESULTS.append((name, passed, detail))
    line = f"[{'PASS' if passed else 'FAIL'}] {name}"
    if detail:
        line += f" -- {detail}"
    print(line, flush=True)


def pytest_terminal_summary(terminalreporter):
    if not CRITERION_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in CRITERION_RESULTS:
        line = f"[{'PASS' if passed else 'FAIL'}] {name}"
        if detail:
            line += f" -- {detail}"
        terminalreporter.write_line(line)
