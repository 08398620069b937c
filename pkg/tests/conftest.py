import pytest

CRITERIA: dict[int, tuple[bool, str]] = {}


class Criterion:
    def __init__(self, number: int):
        self.number = number
        self.reported = False

    def report(self, ok: bool, detail: str) -> bool:
        CRITERIA[self.number] = (bool(ok), detail)
        self.reported = True
        return bool(ok)


@pytest.fixture
def criterion(request):
    rec = Criterion(request.node.get_closest_marker("criterion").args[0])
    yield rec
    if not rec.reported:
        CRITERIA[rec.number] = (False, "raised before reporting")


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
