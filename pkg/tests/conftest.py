import json
from pathlib import Path

import pytest

from quadmintime.config import scenario_from_dict, shipped_scenario
from quadmintime.run import FILES, run

from synthetic import straight_scenario


class SolvedRun:
    """Artifacts of one solve: directory, summary and parsed solver log."""

    def __init__(self, out: Path, summary: dict):
        self.dir = out
        self.summary = summary
        with open(out / FILES["log"]) as fh:
            self.log = [json.loads(line) for line in fh]

    def events(self, kind):
        return [e for e in self.log if e["event"] == kind]


def _solve(config, tmp_path_factory, name):
    out = tmp_path_factory.mktemp(name)
    return SolvedRun(out, run(config, out))


@pytest.fixture(scope="session")
def scenario1_run(tmp_path_factory):
    return _solve(shipped_scenario("scenario1"), tmp_path_factory, "scenario1")


@pytest.fixture(scope="session")
def scenario2_run(tmp_path_factory):
    return _solve(shipped_scenario("scenario2"), tmp_path_factory, "scenario2")


@pytest.fixture(scope="session")
def straight_run(tmp_path_factory):
    return _solve(scenario_from_dict(straight_scenario()), tmp_path_factory, "straight")


ACCEPTANCE = pytest.StashKey[dict]()


class Criteria:
    """Collects one verdict per acceptance criterion for the terminal summary."""

    def __init__(self, store: dict):
        self.store = store

    def record(self, n: int, ok: bool, detail: str) -> None:
        self.store[n] = (bool(ok), detail)
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, f"criterion {n}: {detail}"


@pytest.fixture
def criteria(request):
    return Criteria(request.config.stash.setdefault(ACCEPTANCE, {}))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(ACCEPTANCE, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(store):
        ok, detail = store[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
