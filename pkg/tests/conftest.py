import sys
from contextlib import contextmanager
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA: dict[int, tuple[str, bool, str]] = {}


def record_criterion(number: int, title: str, passed: bool, detail: str = "") -> None:
    _CRITERIA[number] = (title, passed, detail)


@contextmanager
def criterion(number: int, title: str):
    """Record a pass/fail line for one acceptance criterion; failures still
    propagate to pytest."""
    try:
        yield
    except BaseException as exc:
        record_criterion(number, title, False, f"{type(exc).__name__}: {exc}")
        raise
    record_criterion(number, title, True)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, passed, detail = _CRITERIA[number]
        status = "PASS" if passed else "FAIL"
        line = f"[{status}] criterion {number}: {title}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)
