"""Run generated programs in isolated child processes and triage the outcome."""

from __future__ import annotations

import hashlib
import logging
import math
import os
import re
import shutil
import signal
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable

log = logging.getLogger(__name__)

DEVICE_PLACEHOLDER = "{{DEVICE}}"
DEFAULT_PATTERNS = ("INTERNAL ASSERT FAILED", "MKL FFT error", "cuFFT error")
DEFAULT_CAP = 64 * 1024

ABORT_SIGNALS = frozenset({"SIGABRT", "SIGIOT", "SIGILL", "SIGFPE", "SIGTRAP", "SIGSYS"})
MEMORY_SIGNALS = frozenset({"SIGSEGV", "SIGBUS"})

_RESULT_LINE = re.compile(r"^RESULT:\s*\[(.*)\]\s*$")
_EXC_LINE = re.compile(r"^([A-Za-z_][\w.]*(?:Error|Exception|Warning|Interrupt|Exit))(?::\s?(.*))?$")


class HarnessEnvironmentError(OSError):
    """The target environment itself is broken (e.g. interpreter missing)."""


class ExitStatus(str, Enum):
    CLEAN_EXIT = "clean_exit"
    NONZERO_EXIT = "nonzero_exit"
    SIGNALED = "signaled"
    TIMED_OUT = "timed_out"


class OutcomeClass(str, Enum):
    SUCCESS = "success"
    GRACEFUL_REJECTION = "graceful_rejection"
    ABORT_SIGNAL = "abort_signal"
    SEGFAULT = "segfault"
    RUNTIME_ERROR_PATTERN = "runtime_error_pattern"
    INCONSISTENT_OUTPUT = "inconsistent_output"
    HANG = "hang"

    @property
    def is_bug(self) -> bool:
        return self in BUG_CLASSES


BUG_CLASSES = frozenset({OutcomeClass.ABORT_SIGNAL, OutcomeClass.SEGFAULT,
                         OutcomeClass.RUNTIME_ERROR_PATTERN, OutcomeClass.INCONSISTENT_OUTPUT})

# lower rank dominates when two device runs disagree
_PRECEDENCE = {
    OutcomeClass.ABORT_SIGNAL: 0,
    OutcomeClass.SEGFAULT: 0,
    OutcomeClass.RUNTIME_ERROR_PATTERN: 1,
    OutcomeClass.INCONSISTENT_OUTPUT: 2,
    OutcomeClass.HANG: 3,
    OutcomeClass.GRACEFUL_REJECTION: 4,
    OutcomeClass.SUCCESS: 5,
}


@dataclass(frozen=True)
class ExecutionOutcome:
    exit_status: ExitStatus
    returncode: int | None = None
    signal_name: str | None = None
    stdout: bytes = b""
    stderr: bytes = b""
    wall_time_s: float = 0.0

    def __post_init__(self) -> None:
        if (self.signal_name is not None) != (self.exit_status == ExitStatus.SIGNALED):
            raise ValueError("signal_name must be set exactly when the process was signaled")

    @property
    def stdout_text(self) -> str:
        return self.stdout.decode("utf-8", errors="replace")

    @property
    def stderr_text(self) -> str:
        return self.stderr.decode("utf-8", errors="replace")


@dataclass
class TargetConfig:
    interpreter_cmd: list[str] = field(default_factory=lambda: [sys.executable])
    env: dict[str, str] = field(default_factory=dict)
    timeout_s: float = 30.0
    device_tokens: list[str] | None = None
    runtime_error_patterns: list[str] = field(default_factory=lambda: list(DEFAULT_PATTERNS))
    consistency_tolerance: float = 1e-3
    program_ext: str = ".py"
    capture_cap: int = DEFAULT_CAP
    prompt_notes: str = ""  # target-specific guidance appended to generation/mutation prompts

    @classmethod
    def from_dict(cls, data: dict, base_dir: str | Path = ".") -> "TargetConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        unknown = set(data) - set(known)
        if unknown:
            raise ValueError(f"unknown target config keys: {sorted(unknown)}")
        cfg = cls(**known)
        base = str(Path(base_dir).resolve())
        cfg.env = {k: str(v).replace("{config_dir}", base) for k, v in cfg.env.items()}
        if cfg.device_tokens is not None and len(cfg.device_tokens) != 2:
            raise ValueError("device_tokens must name exactly two devices")
        return cfg


def _tail(path: Path, cap: int) -> bytes:
    size = path.stat().st_size
    with path.open("rb") as fh:
        if size > cap:
            fh.seek(size - cap)
        return fh.read(cap)


def _resolve_interpreter(cmd: list[str]) -> None:
    if not cmd:
        raise HarnessEnvironmentError("interpreter command is empty")
    exe = cmd[0]
    found = shutil.which(exe) if os.sep not in exe else (exe if os.access(exe, os.X_OK) else None)
    if not found:
        raise HarnessEnvironmentError(f"interpreter {exe!r} not found")


def execute(program_path: str | Path, interpreter_cmd: list[str] | None = None, env: dict | None = None,
            timeout_s: float = 30.0, capture_cap: int = DEFAULT_CAP) -> ExecutionOutcome:
    """Run one program in a fresh process group and temporary working directory.

    Output streams go to files so adversarially large output stays bounded;
    only the last ``capture_cap`` bytes of each are kept. The working
    directory path is scrubbed from the captures so diagnostics are stable
    across runs.
    """
    cmd = list(interpreter_cmd or [sys.executable])
    _resolve_interpreter(cmd)
    program = Path(program_path)
    if not program.is_file():
        raise FileNotFoundError(program)
    run_env = dict(os.environ)
    run_env.update(env or {})
    with tempfile.TemporaryDirectory(prefix="edgefuzz-run-") as tmp:
        workdir = Path(tmp)
        local = workdir / ("program" + program.suffix)
        shutil.copyfile(program, local)
        out_path, err_path = workdir / ".stdout", workdir / ".stderr"
        start = time.monotonic()
        with out_path.open("wb") as out, err_path.open("wb") as err:
            proc = subprocess.Popen(cmd + [str(local)], cwd=workdir, env=run_env, stdout=out, stderr=err,
                                    stdin=subprocess.DEVNULL, start_new_session=True)
            timed_out = False
            try:
                proc.wait(timeout=timeout_s)
            except subprocess.TimeoutExpired:
                timed_out = True
                try:
                    os.killpg(proc.pid, signal.SIGKILL)
                except ProcessLookupError:
                    pass
                proc.wait()
        elapsed = time.monotonic() - start
        scrub = str(workdir).encode()
        stdout = _tail(out_path, capture_cap).replace(scrub, b".")
        stderr = _tail(err_path, capture_cap).replace(scrub, b".")
    rc = proc.returncode
    if timed_out:
        return ExecutionOutcome(ExitStatus.TIMED_OUT, rc, None, stdout, stderr, elapsed)
    if rc < 0:
        try:
            name = signal.Signals(-rc).name
        except ValueError:
            name = f"SIG{-rc}"
        return ExecutionOutcome(ExitStatus.SIGNALED, rc, name, stdout, stderr, elapsed)
    status = ExitStatus.CLEAN_EXIT if rc == 0 else ExitStatus.NONZERO_EXIT
    return ExecutionOutcome(status, rc, None, stdout, stderr, elapsed)


def matched_pattern(text: str, patterns: Iterable[str]) -> str | None:
    for pat in patterns:
        if re.search(pat, text):
            return pat
    return None


def classify(outcome: ExecutionOutcome, patterns: Iterable[str] = DEFAULT_PATTERNS) -> OutcomeClass:
    status = outcome.exit_status
    if status == ExitStatus.SIGNALED:
        if outcome.signal_name in MEMORY_SIGNALS:
            return OutcomeClass.SEGFAULT
        # abort family and any other fatal signal
        return OutcomeClass.ABORT_SIGNAL
    if status == ExitStatus.TIMED_OUT:
        return OutcomeClass.HANG
    if matched_pattern(outcome.stderr_text, patterns):
        return OutcomeClass.RUNTIME_ERROR_PATTERN
    if status == ExitStatus.NONZERO_EXIT:
        return OutcomeClass.GRACEFUL_REJECTION
    return OutcomeClass.SUCCESS


def exception_name(stderr: str) -> str | None:
    for line in reversed(stderr.strip().splitlines()):
        m = _EXC_LINE.match(line.strip())
        if m:
            return m.group(1)
    return None


def diagnostic_token(outcome: ExecutionOutcome, cls: OutcomeClass, patterns: Iterable[str] = DEFAULT_PATTERNS) -> str:
    if cls in (OutcomeClass.ABORT_SIGNAL, OutcomeClass.SEGFAULT):
        return outcome.signal_name or ""
    if cls == OutcomeClass.RUNTIME_ERROR_PATTERN:
        return matched_pattern(outcome.stderr_text, patterns) or ""
    if cls == OutcomeClass.HANG:
        return "timeout"
    if cls == OutcomeClass.INCONSISTENT_OUTPUT:
        return "RESULT mismatch"
    if cls == OutcomeClass.GRACEFUL_REJECTION:
        return exception_name(outcome.stderr_text) or f"exit {outcome.returncode}"
    return ""


def parse_result(stdout: str) -> list[float] | None:
    """Numeric payload of the last ``RESULT: [...]`` line, or None."""
    for line in reversed(stdout.splitlines()):
        m = _RESULT_LINE.match(line.strip())
        if not m:
            continue
        body = m.group(1).strip()
        if not body:
            return []
        try:
            return [float(tok) for tok in body.split(",")]
        except ValueError:
            return None
    return None


def payloads_match(a: list[float], b: list[float], tolerance: float) -> bool:
    if len(a) != len(b):
        return False
    for x, y in zip(a, b):
        if math.isnan(x) and math.isnan(y):
            continue
        if not math.isclose(x, y, rel_tol=tolerance, abs_tol=1e-12):
            return False
    return True


@dataclass
class Verdict:
    cls: OutcomeClass
    outcome: ExecutionOutcome
    diagnostic: str = ""
    outcomes: tuple[ExecutionOutcome, ...] = ()
    note: str = ""


class Harness:
    """Executes programs for one target configuration."""

    def __init__(self, config: TargetConfig | None = None):
        self.config = config or TargetConfig()

    def execute(self, program_path: str | Path, timeout_s: float | None = None) -> ExecutionOutcome:
        c = self.config
        return execute(program_path, c.interpreter_cmd, c.env, timeout_s or c.timeout_s, c.capture_cap)

    def execute_text(self, source: str, timeout_s: float | None = None) -> ExecutionOutcome:
        with tempfile.TemporaryDirectory(prefix="edgefuzz-src-") as tmp:
            path = Path(tmp) / ("program" + self.config.program_ext)
            path.write_text(source, encoding="utf-8")
            return self.execute(path, timeout_s)

    def classify(self, outcome: ExecutionOutcome) -> OutcomeClass:
        return classify(outcome, self.config.runtime_error_patterns)

    def verdict(self, outcome: ExecutionOutcome) -> Verdict:
        cls = self.classify(outcome)
        return Verdict(cls, outcome, diagnostic_token(outcome, cls, self.config.runtime_error_patterns), (outcome,))

    def materialize(self, template: str, device: str | None = None) -> str:
        if device is None:
            device = self.config.device_tokens[0] if self.config.device_tokens else "cpu"
        return template.replace(DEVICE_PLACEHOLDER, device)

    def run(self, source: str, timeout_s: float | None = None) -> Verdict:
        """Execute a program (device placeholder bound to the first device) and classify it."""
        return self.verdict(self.execute_text(self.materialize(source), timeout_s))

    def compare_devices(self, program_template: str, devices: tuple[str, str] | list[str] | None = None,
                        tolerance: float | None = None) -> Verdict:
        devices = list(devices or self.config.device_tokens or ())
        if len(devices) != 2:
            raise ValueError("compare_devices needs exactly two device tokens")
        tol = self.config.consistency_tolerance if tolerance is None else tolerance
        verdicts = [self.verdict(self.execute_text(program_template.replace(DEVICE_PLACEHOLDER, d)))
                    for d in devices]
        outcomes = tuple(v.outcome for v in verdicts)
        failing = [v for v in verdicts if v.cls != OutcomeClass.SUCCESS]
        if failing:
            worst = min(failing, key=lambda v: _PRECEDENCE[v.cls])
            return Verdict(worst.cls, worst.outcome, worst.diagnostic, outcomes)
        first, second = (parse_result(o.stdout_text) for o in outcomes)
        if first is None and second is None:
            log.warning("device comparison skipped: no RESULT payload on either device")
            return Verdict(OutcomeClass.SUCCESS, outcomes[0], "", outcomes, note="comparison skipped")
        if first is None or second is None or not payloads_match(first, second, tol):
            return Verdict(OutcomeClass.INCONSISTENT_OUTPUT, outcomes[1], "RESULT mismatch", outcomes,
                           note=f"{devices[0]}={first} {devices[1]}={second}")
        return Verdict(OutcomeClass.SUCCESS, outcomes[0], "", outcomes)

    def judge(self, source: str) -> Verdict:
        """Device comparison when configured and the program uses the placeholder, else a single run."""
        if self.config.device_tokens and DEVICE_PLACEHOLDER in source:
            return self.compare_devices(source)
        return self.run(source)


# --------------------------------------------------------------------------
# bug reports


def fingerprint(api: str, cls: OutcomeClass, diagnostic: str) -> str:
    return hashlib.sha1(f"{api}|{cls.value}|{diagnostic}".encode("utf-8")).hexdigest()[:16]


@dataclass
class BugReport:
    api: str
    cls: OutcomeClass
    fingerprint: str
    program_path: str
    outcome: ExecutionOutcome
    edge_case_id: str | None = None
    instantiation: str = ""
    positions: tuple[int, ...] = ()
    diagnostic: str = ""
    base_program: str = ""
    count: int = 1

    def __post_init__(self) -> None:
        if self.cls not in BUG_CLASSES:
            raise ValueError(f"{self.cls} is not a bug class")

    def to_dict(self) -> dict:
        return {
            "api": self.api,
            "edge_case_id": self.edge_case_id,
            "instantiation": self.instantiation,
            "positions": list(self.positions),
            "outcome_class": self.cls.value,
            "signal_or_pattern": self.diagnostic,
            "program_path": self.program_path,
            "base_program": self.base_program,
            "fingerprint": self.fingerprint,
            "count": self.count,
        }


def dedupe(reports: Iterable[BugReport]) -> list[BugReport]:
    """One report per fingerprint (first occurrence wins); ``count`` tallies duplicates."""
    kept: dict[str, BugReport] = {}
    for rep in reports:
        if rep.fingerprint in kept:
            kept[rep.fingerprint].count += rep.count
        else:
            kept[rep.fingerprint] = BugReport(**{**rep.__dict__})
    return list(kept.values())
