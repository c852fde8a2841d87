import pytest

_ACCEPTANCE: list[tuple[str, bool, str]] = []


class AcceptanceRecorder:
    """Collects one verdict per acceptance criterion for the summary."""

    def __init__(self):
        self.checks: list[tuple[str, bool, str]] = []

    def check(self, name: str, ok: bool, detail: str):
        self.checks.append((name, bool(ok), detail))

    def finish(self, criterion: str):
        ok = all(c[1] for c in self.checks)
        detail = "; ".join(f"{'ok' if c[1] else 'FAILED'} {c[0]}: {c[2]}" for c in self.checks)
        _ACCEPTANCE.append((criterion, ok, detail))
        print(f"{criterion}: {'PASS' if ok else 'FAIL'} | {detail}")
        failed = [f"{c[0]} ({c[2]})" for c in self.checks if not c[1]]
        assert not failed, f"{criterion} failed: " + "; ".join(failed)


@pytest.fixture
def acceptance():
    return AcceptanceRecorder()


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in sorted(_ACCEPTANCE, key=lambda r: int(r[0].split()[0][1:])):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  | {detail}")
