"""Initial program synthesis: bounded generate-and-debug loop per API."""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .catalog import ApiSignature
from .harness import ExecutionOutcome, ExitStatus, Harness, OutcomeClass
from .llm import LlmDialogue, LlmError, LlmGateway, extract_code

log = logging.getLogger(__name__)

REGENERATE = "Regenerate"
_FRAME = re.compile(r'^\s*File "([^"]*)", line (\d+), in (\S+)')
_EXC = re.compile(r"^([A-Za-z_][\w.]*(?:Error|Exception|Warning|Interrupt|Exit))(?::\s?(.*))?$")


@dataclass
class SynthesisConfig:
    init_max: int = 2
    debug_max: int = 3
    exec_timeout_s: float = 30.0
    error_budget: int = 2048
    workers: int = 1

    def __post_init__(self) -> None:
        if self.init_max <= 0 or self.debug_max <= 0:
            raise ValueError("init_max and debug_max must be positive")
        if self.exec_timeout_s <= 0 or self.error_budget <= 0:
            raise ValueError("exec_timeout_s and error_budget must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "SynthesisConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown synthesis config keys: {sorted(unknown)}")
        return cls(**data)


class ProgramStatus(str, Enum):
    VALID = "valid"
    FAILED = "failed"


@dataclass
class TestProgram:
    api_name: str
    source_text: str
    lineage: LlmDialogue | None
    attempts: tuple[int, int]
    status: ProgramStatus
    llm_calls: int = 0
    cause: str = ""
    rounds: list[LlmDialogue] = field(default_factory=list)  # every init round's dialogue, in order

    __test__ = False  # not a pytest class

    @property
    def init_rounds(self) -> int:
        return self.attempts[0]

    @property
    def debug_rounds(self) -> int:
        return self.attempts[1]

    @property
    def debugged(self) -> bool:
        """True unless the very first generated program was already valid."""
        return self.attempts != (1, 0)

    def report_entry(self) -> dict:
        entry = {"api": self.api_name, "status": self.status.value, "init_rounds": self.init_rounds,
                 "debug_rounds": self.debug_rounds, "llm_calls": self.llm_calls}
        if self.cause:
            entry["cause"] = self.cause
        return entry


# --------------------------------------------------------------------------
# prompt


def build_generation_prompt(api: ApiSignature, notes: str = "") -> LlmDialogue:
    if api.parameters:
        plist = "\n".join(f"- {p.name}: {p.type.value}" + (" (optional)" if p.optional else "")
                          for p in api.parameters)
    else:
        plist = "(none)"
    hint = f"\nDescription: {api.doc_hint}\n" if api.doc_hint else ""
    extra = f"\nTarget notes:\n{notes.strip()}\n" if notes.strip() else ""
    prompt = f"""Write a test program for the API `{api.name}`.

API definition:
{api.signature_text()}
{hint}
Parameters:
{plist}

Requirements:
1. The program must be minimal and self-contained: import what it needs and nothing else.
2. Construct valid input values for every parameter listed above.
3. Call `{api.name}` exactly once, passing the constructed values.
4. Print the result of the call.
5. Do not catch exceptions.
{extra}
Reply with the complete program in a single fenced code block."""
    return LlmDialogue("generation", subject=api.name).user(prompt)


def debug_message(error_info: str) -> str:
    return f"The program failed with the following error:\n{error_info}\n{REGENERATE}"


# --------------------------------------------------------------------------
# error extraction


def _tail_bytes(text: str, budget: int) -> str:
    data = text.encode("utf-8")
    if len(data) <= budget:
        return text
    return data[-budget:].decode("utf-8", errors="ignore")


def extract_error_info(outcome: ExecutionOutcome, budget: int = 2048, timeout_s: float | None = None) -> str:
    """Exception class, message and innermost frame of a failed run, at most ``budget`` bytes."""
    if outcome.exit_status == ExitStatus.TIMED_OUT:
        t = timeout_s if timeout_s is not None else outcome.wall_time_s
        return _tail_bytes(f"timeout after {t:g}s", budget)
    stderr = outcome.stderr_text.rstrip()
    if not stderr.strip():
        if outcome.exit_status == ExitStatus.SIGNALED:
            return f"killed by {outcome.signal_name}, no diagnostic"
        return f"exit code {outcome.returncode}, no diagnostic"
    lines = stderr.splitlines()
    exc_idx = None
    for idx in range(len(lines) - 1, -1, -1):
        if _EXC.match(lines[idx].strip()):
            exc_idx = idx
            break
    frame = None
    for line in lines[:exc_idx] if exc_idx is not None else []:
        m = _FRAME.match(line)
        if m:
            frame = (m.group(3), int(m.group(2)))
    if exc_idx is None or frame is None:
        return _tail_bytes(stderr, budget)
    # the exception message may continue over several lines
    message = "\n".join(line.rstrip() for line in lines[exc_idx:]).strip()
    suffix = f" in <frame {frame[0]}, line {frame[1]}>"
    if outcome.exit_status == ExitStatus.SIGNALED:
        suffix += f" (killed by {outcome.signal_name})"
    return _tail_bytes(message + suffix, budget)


# --------------------------------------------------------------------------
# generation loop


def calls_api(source: str, api: ApiSignature) -> bool:
    return re.search(r"(?<![\w])" + re.escape(api.short_name) + r"(?!\w)", source) is not None


def check_program(source: str, api: ApiSignature, harness: Harness, cfg: SynthesisConfig) -> tuple[bool, str]:
    """Run a candidate; returns (valid, error_info)."""
    if not calls_api(source, api):
        return False, f"the program does not call `{api.name}`"
    verdict = harness.run(source, cfg.exec_timeout_s)
    if verdict.cls == OutcomeClass.SUCCESS:
        return True, ""
    return False, extract_error_info(verdict.outcome, cfg.error_budget, cfg.exec_timeout_s)


def generate_initial(api: ApiSignature, gateway: LlmGateway, harness: Harness,
                     cfg: SynthesisConfig | None = None) -> TestProgram:
    cfg = cfg or SynthesisConfig()
    notes = harness.config.prompt_notes
    calls = 0
    rounds: list[LlmDialogue] = []
    source = ""
    for init in range(1, cfg.init_max + 1):
        dialogue = build_generation_prompt(api, notes)
        rounds.append(dialogue)
        debug = 0
        while True:
            try:
                response = gateway.complete(dialogue)
            except LlmError as exc:
                log.warning("%s: synthesis aborted: %s", api.name, exc)
                return TestProgram(api.name, source, dialogue, (init, debug), ProgramStatus.FAILED,
                                   calls, f"llm failure: {exc}", rounds)
            calls += 1
            source = extract_code(response)
            valid, info = check_program(source, api, harness, cfg)
            if valid:
                dialogue.assistant(response)
                return TestProgram(api.name, source, dialogue, (init, debug), ProgramStatus.VALID, calls,
                                   "", rounds)
            if debug == cfg.debug_max:
                dialogue.assistant(response)
                break
            dialogue.assistant(response).user(debug_message(info))
            dialogue.stage_tag = "debug"
            debug += 1
    return TestProgram(api.name, source, rounds[-1], (cfg.init_max, cfg.debug_max), ProgramStatus.FAILED,
                       calls, "no valid program within the attempt budget", rounds)


@dataclass
class SynthesisRun:
    programs: list[TestProgram]

    @property
    def covered(self) -> int:
        return sum(p.status == ProgramStatus.VALID for p in self.programs)

    def debug_success(self) -> tuple[int, int]:
        """(succeeded, failed) among APIs whose first program was invalid."""
        succeeded = sum(p.debugged and p.status == ProgramStatus.VALID for p in self.programs)
        failed = sum(p.status == ProgramStatus.FAILED for p in self.programs)
        return succeeded, failed


def synthesize_all(apis: list[ApiSignature], gateway: LlmGateway, harness: Harness,
                   cfg: SynthesisConfig | None = None) -> SynthesisRun:
    cfg = cfg or SynthesisConfig()
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            programs = list(pool.map(lambda a: generate_initial(a, gateway, harness, cfg), apis))
    else:
        programs = [generate_initial(a, gateway, harness, cfg) for a in apis]
    return SynthesisRun(programs)


def program_path(out_dir: str | Path, api_name: str, ext: str = ".py") -> Path:
    return Path(out_dir) / f"{api_name}{ext}"


def write_programs(run: SynthesisRun, out_dir: str | Path, ext: str = ".py") -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for prog in run.programs:
        path = program_path(out, prog.api_name, ext)
        if prog.status == ProgramStatus.VALID:
            path.write_text(prog.source_text, encoding="utf-8")
        elif path.exists():
            path.unlink()
    report = out / "synthesis_report.json"
    report.write_text(json.dumps([p.report_entry() for p in run.programs], indent=2) + "\n", encoding="utf-8")
    return report


def load_synthesis_report(path: str | Path) -> list[dict]:
    return json.loads(Path(path).read_text(encoding="utf-8"))
