from __future__ import annotations

from pathlib import Path

import pytest

from rrforensics.ingest import COMPUTERIZED, CenterRecord, EventTally, GeoPath, parse_centers

FIXTURES = Path(__file__).parent / "fixtures"


def make_center(code="01.01.001", *, si=60, no=40, null=0, signatures=50, channel=COMPUTERIZED,
                geo=("S", "C", "T"), e1998=None, **flags) -> CenterRecord:
    """Build a center with an RR2004 tally and, optionally, an E1998 tally (fav, unf, null)."""
    tallies = {"RR2004": EventTally("RR2004", si, no, null)}
    if e1998 is not None:
        tallies["E1998"] = EventTally("E1998", *e1998)
    return CenterRecord(code=code, geo=GeoPath(*geo), channel=channel, signatures=signatures,
                        tallies=tallies, **flags)


@pytest.fixture(scope="session")
def mini50():
    return parse_centers(FIXTURES / "mini50.csv")


@pytest.fixture(scope="session")
def mini50_path():
    return FIXTURES / "mini50.csv"


# -- acceptance summary ----------------------------------------------------------

_criteria: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, text = mark.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "PASS" if rep.passed else "SKIP" if rep.skipped else "FAIL"
        prev = _criteria.get(number)
        # a criterion with several tests fails if any part fails
        if prev is None or prev[0] == "PASS" or status == "FAIL":
            _criteria[number] = (status, text)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        status, text = _criteria[number]
        terminalreporter.write_line(f"criterion {number}: {status}  {text}")
