from pathlib import Path

import pytest

from atsearch import datasets
from atsearch.puzzles import ArithmeticInstance, PuzzleKind

FIXTURES = Path(__file__).parent / "fixtures"


def fixture_text(name: str) -> str:
    return (FIXTURES / name).read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def splits():
    return {kind: datasets.build_split(kind)[0] for kind in PuzzleKind}


@pytest.fixture
def inst_2_3_10():
    return ArithmeticInstance((2, 3, 10), 16)


@pytest.fixture
def inst_1_1_7():
    return ArithmeticInstance((1, 1, 7), 8)


_CRITERIA: list[str] = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call":
        return
    number, title = marker.args
    status = "PASS" if rep.passed else "FAIL"
    notes = "; ".join(v for k, v in item.user_properties if k == "note")
    _CRITERIA.append(f"[{number}] {title}: {status} ({call.duration:.1f}s){' - ' + notes if notes else ''}")


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s[1 : s.index("]")])):
            terminalreporter.write_line(line)
