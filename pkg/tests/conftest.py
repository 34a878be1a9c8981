import pytest

from specdiff.mockfleet import spawn_fleet
from specdiff.pipeline import load_run_spec

_criteria: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, text = marker.args
    state = _criteria.setdefault(number, {"text": text, "status": None})
    if rep.failed:
        state["status"] = "FAIL"
    elif rep.skipped and state["status"] is None:
        state["status"] = "SKIP"
    elif rep.when == "call" and rep.passed and state["status"] in (None, "SKIP"):
        state["status"] = "PASS"


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        state = _criteria[number]
        terminalreporter.write_line(f"criterion {number}: {state['status'] or 'NOT RUN'} - {state['text']}")


@pytest.fixture(scope="session")
def bundled_spec():
    return load_run_spec()


@pytest.fixture(scope="session")
def clean_fleet():
    with spawn_fleet(chain_seed=7, node_count=3) as fleet:
        yield fleet
