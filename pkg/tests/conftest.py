import functools
import json
import shutil
from pathlib import Path

import pytest

from edgefuzz.catalog import load_catalog
from edgefuzz.harness import Harness, TargetConfig
from edgefuzz.miner import mine_blocks

FIXTURES = Path(__file__).parent / "fixtures"
NATIVE = FIXTURES / "native"
TARGET = FIXTURES / "target"


@pytest.fixture(scope="session")
def fixture_blocks():
    return mine_blocks(NATIVE)


@pytest.fixture(scope="session")
def blocks_by_function(fixture_blocks):
    return {b.checks[0].enclosing_function: b for b in fixture_blocks}


@pytest.fixture(scope="session")
def toy_catalog():
    return load_catalog(TARGET / "catalog.json")


@pytest.fixture
def toy_harness():
    return Harness(TargetConfig(env={"PYTHONPATH": str(TARGET)}, timeout_s=10, device_tokens=["cpu", "gpu"]))


def write_pipeline_config(dest: Path, **llm) -> Path:
    """Copy of the fake-target pipeline config with absolute paths and a private work dir."""
    data = json.loads((TARGET / "pipeline.json").read_text())
    data["paths"] = {"src": str(NATIVE), "apis": str(TARGET / "catalog.json"), "work": str(dest / "work")}
    data["target"]["env"] = {"PYTHONPATH": str(TARGET)}
    rules = dest / "rules.json"
    shutil.copyfile(TARGET / "rules.json", rules)
    data["llm"] = {"backend": "rule", "rules_path": "rules.json", **llm}
    path = dest / "pipeline.json"
    path.write_text(json.dumps(data, indent=2))
    return path


# --------------------------------------------------------------------------
# acceptance reporting and the session-wide synthesis budget check

CRITERIA: list[str] = []
_BUDGET: list[int] = []  # generation+debug calls per synthesis run
SYNTH_BUDGET = 8


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number, ok: bool, detail: str) -> None:
        CRITERIA.append(f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}")
        assert ok, detail

    return record


def _track_synthesis_calls():
    """Wrap generate_initial so every synthesis run in the session is checked against the budget.

    Installed when conftest is imported, before test modules bind the name.
    """
    from edgefuzz import synthesizer

    original = synthesizer.generate_initial

    @functools.wraps(original)
    def tracked(api, gateway, *args, **kwargs):
        def spent():
            calls = gateway.ledger.for_api(api.name)
            return calls["generation"] + calls["debug"]

        before = spent()
        prog = original(api, gateway, *args, **kwargs)
        _BUDGET.append(spent() - before)
        return prog

    synthesizer.generate_initial = tracked


_track_synthesis_calls()


def budget_worst() -> int:
    return max(_BUDGET, default=0)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA:
            terminalreporter.write_line(line)
    if _BUDGET:
        worst = budget_worst()
        status = "PASS" if worst <= SYNTH_BUDGET else "FAIL"
        terminalreporter.write_line(f"criterion 4 (session ledger): {status} - max generation+debug calls in any "
                                    f"synthesis run this session: {worst} (budget {SYNTH_BUDGET}, "
                                    f"{len(_BUDGET)} synthesis runs tracked)")


def pytest_sessionfinish(session, exitstatus):
    if budget_worst() > SYNTH_BUDGET and exitstatus == 0:
        session.exitstatus = 1
