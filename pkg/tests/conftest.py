"""Collects one verdict line per acceptance criterion and prints them at the end of the run."""

ACCEPTANCE: dict[int, str] = {}


def record(number: int, ok: bool, title: str, detail: str) -> None:
    ACCEPTANCE[number] = f"criterion {number} {'PASS' if ok else 'FAIL'}  {title}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
