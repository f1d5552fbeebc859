import pytest

_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


class AcceptanceRecorder:
    def __call__(self, criterion: int, passed: bool, detail: str) -> None:
        _ACCEPTANCE[criterion] = (bool(passed), detail)
        print(f"{'PASS' if passed else 'FAIL'} criterion {criterion}: {detail}")


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceRecorder()


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(_ACCEPTANCE):
        passed, detail = _ACCEPTANCE[criterion]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {criterion}: {detail}")
