import json
import sys
import time

import pytest
from hypothesis import given, strategies as st

from edgefuzz.harness import (
    BUG_CLASSES, DEVICE_PLACEHOLDER, BugReport, ExecutionOutcome, ExitStatus, Harness, HarnessEnvironmentError,
    OutcomeClass, TargetConfig, classify, dedupe, diagnostic_token, fingerprint, parse_result, payloads_match,
)

from conftest import FIXTURES

TRUTH = json.loads((FIXTURES / "truth_table.json").read_text())


def outcome_for(row):
    stderr = TRUTH["pattern_hit_stderr"] if row["pattern_hit"] else TRUTH["pattern_miss_stderr"]
    status = ExitStatus(row["exit_status"])
    rc = {ExitStatus.CLEAN_EXIT: 0, ExitStatus.NONZERO_EXIT: 1, ExitStatus.TIMED_OUT: -9}.get(status, -6)
    return ExecutionOutcome(status, rc, row["signal"], b"", stderr.encode())


@pytest.mark.parametrize("row", TRUTH["rows"], ids=lambda r: f"{r['exit_status']}-{r['signal']}-{r['pattern_hit']}")
def test_truth_table(row):
    assert classify(outcome_for(row), TRUTH["patterns"]).value == row["expected"]


def test_truth_table_covers_every_status():
    assert {r["exit_status"] for r in TRUTH["rows"]} == {s.value for s in ExitStatus}
    assert {(r["exit_status"], r["pattern_hit"]) for r in TRUTH["rows"]} >= {
        (s.value, hit) for s in ExitStatus for hit in (False, True)}


signals = st.sampled_from(["SIGABRT", "SIGSEGV", "SIGBUS", "SIGILL", "SIGFPE", "SIGKILL", "SIGTERM", "SIG77"])


@st.composite
def outcomes(draw):
    status = draw(st.sampled_from(list(ExitStatus)))
    sig = draw(signals) if status == ExitStatus.SIGNALED else None
    return ExecutionOutcome(status, draw(st.integers(-64, 255)), sig, draw(st.binary(max_size=64)),
                            draw(st.binary(max_size=64) | st.sampled_from([b"INTERNAL ASSERT FAILED", b"cuFFT error"])),
                            draw(st.floats(0, 100)))


@given(outcomes())
def test_classification_total_and_exclusive(outcome):
    cls = classify(outcome)
    assert isinstance(cls, OutcomeClass)
    assert [c for c in OutcomeClass if c == cls] == [cls]
    assert cls.is_bug == (cls in BUG_CLASSES)
    assert isinstance(diagnostic_token(outcome, cls), str)


def test_outcome_signal_invariant():
    with pytest.raises(ValueError):
        ExecutionOutcome(ExitStatus.CLEAN_EXIT, 0, "SIGSEGV")
    with pytest.raises(ValueError):
        ExecutionOutcome(ExitStatus.SIGNALED, -11, None)


# --------------------------------------------------------------------------
# real child processes


@pytest.fixture
def harness():
    return Harness(TargetConfig(timeout_s=10))


def test_success(harness):
    v = harness.run("print('hello')\n")
    assert v.cls == OutcomeClass.SUCCESS and v.outcome.stdout_text == "hello\n"


def test_abort(harness):
    v = harness.run("import os\nos.abort()\n")
    assert (v.cls, v.diagnostic) == (OutcomeClass.ABORT_SIGNAL, "SIGABRT")


def test_segfault_only_kills_the_child(harness):
    v = harness.run("import ctypes\nctypes.string_at(0)\n")
    assert (v.cls, v.diagnostic) == (OutcomeClass.SEGFAULT, "SIGSEGV")
    assert harness.run("print(1)\n").cls == OutcomeClass.SUCCESS


def test_runtime_error_pattern(harness):
    v = harness.run("import sys\nsys.stderr.write('RuntimeError: INTERNAL ASSERT FAILED at x.cpp\\n')\nsys.exit(1)\n")
    assert (v.cls, v.diagnostic) == (OutcomeClass.RUNTIME_ERROR_PATTERN, "INTERNAL ASSERT FAILED")


def test_graceful_rejection(harness):
    v = harness.run("raise ValueError('dim must be non-negative')\n")
    assert (v.cls, v.diagnostic) == (OutcomeClass.GRACEFUL_REJECTION, "ValueError")


def test_hang_is_killed(harness):
    start = time.monotonic()
    v = harness.run("import time\nwhile True:\n    time.sleep(0.05)\n", timeout_s=1)
    assert v.cls == OutcomeClass.HANG and v.diagnostic == "timeout"
    assert time.monotonic() - start < 8


def test_hung_grandchild_is_killed(harness):
    src = "import subprocess, sys\nsubprocess.run([sys.executable, '-c', 'import time; time.sleep(60)'])\n"
    start = time.monotonic()
    assert harness.run(src, timeout_s=1).cls == OutcomeClass.HANG
    assert time.monotonic() - start < 8


def test_output_is_capped():
    h = Harness(TargetConfig(capture_cap=1024))
    out = h.run("print('x' * 200000)\nprint('tail')\n").outcome
    assert len(out.stdout) == 1024 and out.stdout.endswith(b"tail\n")


def test_workdir_path_is_scrubbed(harness):
    v = harness.run("import os\nraise RuntimeError(os.getcwd())\n")
    assert "edgefuzz-run-" not in v.outcome.stderr_text


def test_environment_passthrough():
    h = Harness(TargetConfig(env={"EDGEFUZZ_PROBE": "42"}))
    assert h.run("import os\nprint(os.environ['EDGEFUZZ_PROBE'])\n").outcome.stdout_text == "42\n"


def test_missing_interpreter():
    h = Harness(TargetConfig(interpreter_cmd=["no-such-python-xyz"]))
    with pytest.raises(HarnessEnvironmentError):
        h.run("print(1)\n")


def test_config_from_dict(tmp_path):
    cfg = TargetConfig.from_dict({"env": {"PYTHONPATH": "{config_dir}/lib"}, "timeout_s": 5}, tmp_path)
    assert cfg.env["PYTHONPATH"] == f"{tmp_path.resolve()}/lib"
    assert cfg.interpreter_cmd == [sys.executable]
    with pytest.raises(ValueError):
        TargetConfig.from_dict({"device_tokens": ["cpu"]})
    with pytest.raises(ValueError):
        TargetConfig.from_dict({"interpreter": "python"})


# --------------------------------------------------------------------------
# device comparison


DEVICE_PROG = f"""import sys
device = "{DEVICE_PLACEHOLDER}"
values = [1.0, 2.0, 3.0]
if device == "gpu":
    values = [v * float(sys.argv[0].count("/") >= 0) * {{scale}} for v in values]
print("RESULT: [" + ", ".join(repr(v) for v in values) + "]")
"""


def device_program(scale):
    return DEVICE_PROG.replace("{scale}", repr(scale))


def test_compare_devices_consistent(harness):
    v = harness.compare_devices(device_program(1.0), ["cpu", "gpu"])
    assert v.cls == OutcomeClass.SUCCESS and len(v.outcomes) == 2


def test_compare_devices_within_tolerance(harness):
    assert harness.compare_devices(device_program(1.0005), ["cpu", "gpu"]).cls == OutcomeClass.SUCCESS


def test_compare_devices_mismatch(harness):
    v = harness.compare_devices(device_program(-1.0), ["cpu", "gpu"])
    assert (v.cls, v.diagnostic) == (OutcomeClass.INCONSISTENT_OUTPUT, "RESULT mismatch")


def test_compare_devices_crash_dominates(harness):
    prog = f'import os\nif "{DEVICE_PLACEHOLDER}" == "gpu":\n    os.abort()\nprint("RESULT: [1.0]")\n'
    assert harness.compare_devices(prog, ["cpu", "gpu"]).cls == OutcomeClass.ABORT_SIGNAL


def test_compare_devices_pattern_outranks_rejection(harness):
    prog = (f'import sys\nif "{DEVICE_PLACEHOLDER}" == "gpu":\n'
            '    sys.stderr.write("INTERNAL ASSERT FAILED\\n"); sys.exit(1)\nraise ValueError("bad")\n')
    assert harness.compare_devices(prog, ["cpu", "gpu"]).cls == OutcomeClass.RUNTIME_ERROR_PATTERN


def test_compare_devices_without_payload(harness):
    v = harness.compare_devices(f'print("{DEVICE_PLACEHOLDER}")\n', ["cpu", "gpu"])
    assert v.cls == OutcomeClass.SUCCESS and v.note == "comparison skipped"


def test_compare_devices_needs_two_tokens(harness):
    with pytest.raises(ValueError):
        harness.compare_devices("print(1)\n")


def test_judge_uses_devices_only_with_placeholder():
    h = Harness(TargetConfig(device_tokens=["cpu", "gpu"]))
    assert len(h.judge("print(1)\n").outcomes) == 1
    assert len(h.judge(device_program(1.0)).outcomes) == 2


def test_parse_result():
    assert parse_result("noise\nRESULT: [1, 2.5, -3e-2]\n") == [1.0, 2.5, -0.03]
    assert parse_result("RESULT: []") == []
    assert parse_result("RESULT: [a, b]") is None
    assert parse_result("nothing") is None
    assert payloads_match([float("nan"), 1.0], [float("nan"), 1.0], 1e-3)
    assert not payloads_match([1.0], [1.0, 2.0], 1e-3)


# --------------------------------------------------------------------------
# bug reports


def bug(api, cls, diag, path):
    out = ExecutionOutcome(ExitStatus.SIGNALED, -6, "SIGABRT")
    return BugReport(api, cls, fingerprint(api, cls, diag), path, out, diagnostic=diag)


def test_dedupe_keeps_first_and_counts():
    reports = [bug("m.sum", OutcomeClass.ABORT_SIGNAL, "SIGABRT", "a"),
               bug("m.sum", OutcomeClass.ABORT_SIGNAL, "SIGABRT", "b"),
               bug("m.sum", OutcomeClass.SEGFAULT, "SIGSEGV", "c"),
               bug("m.add", OutcomeClass.ABORT_SIGNAL, "SIGABRT", "d")]
    kept = dedupe(reports)
    assert [(b.api, b.program_path, b.count) for b in kept] == [("m.sum", "a", 2), ("m.sum", "c", 1),
                                                                 ("m.add", "d", 1)]
    assert reports[0].count == 1  # inputs untouched


def test_bug_report_requires_bug_class():
    with pytest.raises(ValueError):
        bug("m.f", OutcomeClass.GRACEFUL_REJECTION, "ValueError", "a")


def test_bug_report_dict_keys():
    d = bug("m.f", OutcomeClass.SEGFAULT, "SIGSEGV", "mutants/x.py").to_dict()
    assert list(d) == ["api", "edge_case_id", "instantiation", "positions", "outcome_class", "signal_or_pattern",
                       "program_path", "base_program", "fingerprint", "count"]
