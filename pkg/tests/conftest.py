"""Collects acceptance outcomes and prints one line per criterion at the end."""

ACCEPTANCE: dict[str, list[tuple[str, bool, str]]] = {}


def record(criterion: str, check: str, passed: bool, detail: str) -> None:
    ACCEPTANCE.setdefault(criterion, []).append((check, bool(passed), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(ACCEPTANCE, key=lambda c: int(c.split()[0][1:])):
        checks = ACCEPTANCE[crit]
        ok = all(p for _, p, _ in checks)
        tr.write_line(f"{'PASS' if ok else 'FAIL'}  {crit}")
        for check, passed, detail in checks:
            tr.write_line(f"      {'ok ' if passed else 'BAD'} {check}: {detail}")
