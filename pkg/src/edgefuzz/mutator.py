"""Edge-case driven mutation of valid base programs."""

from __future__ import annotations

import hashlib
import json
import logging
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .catalog import ApiSignature, etype_of
from .corpus import SLOT, ContextFreeEdgeCase, EdgeCaseCorpus, Instantiation, concretize, match
from .harness import DEVICE_PLACEHOLDER, BugReport, Harness, OutcomeClass, dedupe, fingerprint
from .llm import LlmDialogue, LlmError, LlmGateway, extract_code
from .synthesizer import ProgramStatus, TestProgram, load_synthesis_report, program_path

log = logging.getLogger(__name__)


@dataclass
class SelectionPolicy:
    rate_pos_1_2: float = 1.0
    rate_pos_3_4: float = 0.25
    rate_pos_5_plus: float = 0.125
    compound_rate: float = 1.0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        for name in ("rate_pos_1_2", "rate_pos_3_4", "rate_pos_5_plus", "compound_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")

    @classmethod
    def from_dict(cls, data: dict) -> "SelectionPolicy":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown policy config keys: {sorted(unknown)}")
        return cls(**data)

    def rate_for(self, position: int) -> float:
        if position <= 2:
            return self.rate_pos_1_2
        if position <= 4:
            return self.rate_pos_3_4
        return self.rate_pos_5_plus

    def rng_for(self, api_name: str) -> random.Random:
        # string hashing is salted per process, so derive the per-API seed explicitly
        digest = hashlib.sha256(f"{self.rng_seed}:{api_name}".encode("utf-8")).digest()
        return random.Random(int.from_bytes(digest[:8], "big"))


@dataclass
class MutationTask:
    api: ApiSignature
    base_program: TestProgram
    edge_case: ContextFreeEdgeCase
    instantiation: Instantiation

    def __post_init__(self) -> None:
        if SLOT.search(self.instantiation.text):
            raise ValueError(f"unresolved type slot in {self.instantiation.text!r}")

    @property
    def param_names(self) -> list[str]:
        return [name for _, name in self.instantiation.binding]


def _keep(rng: random.Random, rate: float) -> bool:
    if rate >= 1.0:
        return True
    if rate <= 0.0:
        return False
    return rng.random() < rate


def select_edge_cases(matches: list[ContextFreeEdgeCase], api: ApiSignature, policy: SelectionPolicy,
                      base_program: TestProgram | None = None, rng: random.Random | None = None) -> list[MutationTask]:
    """Concretize matches and keep instantiations by the position-weighted rates."""
    rng = rng or policy.rng_for(api.name)
    base = base_program or TestProgram(api.name, "", None, (0, 0), ProgramStatus.VALID)
    tasks = []
    for case in matches:
        for inst in concretize(case, api):
            if case.kind == "compound":
                rate = policy.compound_rate
            else:
                rate = policy.rate_for(inst.positions[0])
            if _keep(rng, rate):
                tasks.append(MutationTask(api, base, case, inst))
    return tasks


def build_mutation_prompt(task: MutationTask, notes: str = "", devices: bool = False) -> LlmDialogue:
    api = task.api
    names = ", ".join(f"'{n}'" for n in task.param_names)
    noun = "parameter" if len(task.param_names) == 1 else "parameters"
    device_rule = ""
    if devices:
        device_rule = (f"\nKeep every occurrence of the device placeholder {DEVICE_PLACEHOLDER} and keep the final "
                       "line that prints the result as `RESULT: [v1, v2, ...]`.")
    extra = f"\nTarget notes:\n{notes.strip()}\n" if notes.strip() else ""
    prompt = f"""The following program tests the API `{api.name}`.

API definition:
{api.signature_text()}

Program:
```
{task.base_program.source_text.rstrip()}
```

Edge case: {task.instantiation.text}

Modify the program so that the {noun} {names} satisfy the edge case above. Change only what the edge case requires and keep the program runnable: it must still call `{api.name}` and print the result. Do not catch exceptions.{device_rule}
{extra}
Reply with the complete modified program in a single fenced code block."""
    return LlmDialogue("mutation", subject=api.name).user(prompt)


@dataclass
class TaskRecord:
    """Outcome of one mutation task, bug or not."""

    api: str
    edge_case_id: str
    instantiation: str
    positions: tuple[int, ...]
    outcome_class: str
    diagnostic: str = ""
    program_path: str = ""
    note: str = ""

    def to_dict(self) -> dict:
        return {"api": self.api, "edge_case_id": self.edge_case_id, "instantiation": self.instantiation,
                "positions": list(self.positions), "outcome_class": self.outcome_class,
                "signal_or_pattern": self.diagnostic, "program_path": self.program_path, "note": self.note}


def _mutant_name(api: ApiSignature, idx: int, task: MutationTask, ext: str) -> str:
    pos = "-".join(str(p) for p in task.instantiation.positions)
    return f"{api.name}__{idx:03d}_{task.edge_case.id[:8]}_p{pos}{ext}"


def fuzz_api(api: ApiSignature, corpus: EdgeCaseCorpus, gateway: LlmGateway, harness: Harness,
             policy: SelectionPolicy, base_program: TestProgram, out_dir: str | Path | None = None,
             records: list[TaskRecord] | None = None, base_path: str = "") -> list[BugReport]:
    """Run every selected mutation task for one API; returns raw (not deduped) bug reports."""
    if base_program.status != ProgramStatus.VALID:
        raise ValueError(f"{api.name}: base program is not valid")
    tasks = select_edge_cases(match(etype_of(api), corpus), api, policy, base_program)
    devices = bool(harness.config.device_tokens)
    ext = harness.config.program_ext
    mutants = Path(out_dir) / "mutants" if out_dir is not None else None
    if mutants is not None:
        mutants.mkdir(parents=True, exist_ok=True)
    bugs = []
    for idx, task in enumerate(tasks):
        dialogue = build_mutation_prompt(task, harness.config.prompt_notes, devices)
        try:
            response = gateway.complete(dialogue)
        except LlmError as exc:
            log.warning("%s: mutation task %d skipped: %s", api.name, idx, exc)
            if records is not None:
                records.append(TaskRecord(api.name, task.edge_case.id, task.instantiation.text,
                                          task.instantiation.positions, "skipped", note=str(exc)))
            continue
        source = extract_code(response)
        path = ""
        if mutants is not None:
            name = _mutant_name(api, idx, task, ext)
            (mutants / name).write_text(source, encoding="utf-8")
            path = f"mutants/{name}"  # relative to the report directory
        verdict = harness.judge(source)
        if records is not None:
            records.append(TaskRecord(api.name, task.edge_case.id, task.instantiation.text,
                                      task.instantiation.positions, verdict.cls.value, verdict.diagnostic,
                                      path, verdict.note))
        if verdict.cls.is_bug:
            bugs.append(BugReport(api=api.name, cls=verdict.cls,
                                  fingerprint=fingerprint(api.name, verdict.cls, verdict.diagnostic),
                                  program_path=path, outcome=verdict.outcome, edge_case_id=task.edge_case.id,
                                  instantiation=task.instantiation.text, positions=task.instantiation.positions,
                                  diagnostic=verdict.diagnostic, base_program=base_path))
        elif verdict.cls == OutcomeClass.HANG:
            log.info("%s: mutant %d timed out", api.name, idx)
    return bugs


# --------------------------------------------------------------------------
# batch over a catalog


@dataclass
class FuzzRun:
    bugs: list[BugReport] = field(default_factory=list)  # deduped
    raw_bugs: int = 0
    records: list[TaskRecord] = field(default_factory=list)
    skipped_apis: list[str] = field(default_factory=list)

    def bugs_by_class(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for b in self.bugs:
            counts[b.cls.value] = counts.get(b.cls.value, 0) + 1
        return dict(sorted(counts.items()))


def load_base_programs(apis: list[ApiSignature], programs_dir: str | Path,
                       ext: str = ".py") -> dict[str, tuple[TestProgram, Path]]:
    """Valid base programs found in a synthesizer output directory."""
    programs_dir = Path(programs_dir)
    attempts = {}
    report = programs_dir / "synthesis_report.json"
    if report.exists():
        for entry in load_synthesis_report(report):
            attempts[entry["api"]] = (entry["init_rounds"], entry["debug_rounds"])
    found = {}
    for api in apis:
        path = program_path(programs_dir, api.name, ext)
        if path.is_file():
            prog = TestProgram(api.name, path.read_text(encoding="utf-8"), None, attempts.get(api.name, (0, 0)),
                               ProgramStatus.VALID)
            found[api.name] = (prog, path)
    return found


def fuzz_all(apis: list[ApiSignature], corpus: EdgeCaseCorpus, gateway: LlmGateway, harness: Harness,
             policy: SelectionPolicy, programs_dir: str | Path, out_dir: str | Path | None = None,
             workers: int = 1) -> FuzzRun:
    bases = load_base_programs(apis, programs_dir, harness.config.program_ext)
    run = FuzzRun()
    todo = []
    for api in apis:
        if api.name in bases:
            todo.append(api)
        else:
            run.skipped_apis.append(api.name)

    def one(api: ApiSignature):
        recs: list[TaskRecord] = []
        prog, path = bases[api.name]
        bugs = fuzz_api(api, corpus, gateway, harness, policy, prog, out_dir, recs, path.name)
        return bugs, recs

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, todo))
    else:
        results = [one(a) for a in todo]
    raw = []
    for bugs, recs in results:  # catalog order, independent of scheduling
        raw.extend(bugs)
        run.records.extend(recs)
    run.raw_bugs = len(raw)
    run.bugs = dedupe(raw)
    return run


def write_fuzz_outputs(run: FuzzRun, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "bugs.jsonl").open("w", encoding="utf-8") as fh:
        for bug in run.bugs:
            fh.write(json.dumps(bug.to_dict(), ensure_ascii=False) + "\n")
    with (out / "outcomes.jsonl").open("w", encoding="utf-8") as fh:
        for rec in run.records:
            fh.write(json.dumps(rec.to_dict(), ensure_ascii=False) + "\n")


def read_bug_reports(path: str | Path) -> list[dict]:
    text = Path(path).read_text(encoding="utf-8")
    return [json.loads(line) for line in text.splitlines() if line.strip()]

