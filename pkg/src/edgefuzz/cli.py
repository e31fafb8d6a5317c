"""Command-line entry point: one subcommand per pipeline stage plus ``run``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from .analyzer import ContextEdgeCase, analyze_blocks
from .catalog import CatalogError, load_catalog
from .corpus import EdgeCaseCorpus, standardize_all
from .harness import Harness, HarnessEnvironmentError, TargetConfig
from .llm import BackendUnavailable, CallLedger, LlmConfig, LlmError, LlmGateway
from .miner import DEFAULT_EXTENSIONS, DEFAULT_MACROS, block_from_dict, block_to_dict, mine_blocks
from .mutator import SelectionPolicy, fuzz_all, read_bug_reports, write_fuzz_outputs
from .report import DebugSuccess, RunReport, emit_report
from .synthesizer import SynthesisConfig, load_synthesis_report, synthesize_all, write_programs

log = logging.getLogger("edgefuzz")

STAGES = ("mine", "analyze", "standardize", "gen", "fuzz")
EXIT_OK, EXIT_CONFIG, EXIT_ENV = 0, 1, 2

# artifact names inside the work directory
BLOCKS, CASES, CORPUS, PROGRAMS, REPORTS = "blocks.jsonl", "cases.jsonl", "corpus.jsonl", "programs", "reports"
LEDGER, RUN_REPORT, SUMMARY = "ledger.json", "run_report.json", "run_report.txt"


class ConfigError(ValueError):
    """Bad or missing configuration or stage input (exit code 1)."""


@dataclass
class MinerSection:
    macros: list[str] = field(default_factory=lambda: sorted(DEFAULT_MACROS))
    extensions: list[str] = field(default_factory=lambda: sorted(DEFAULT_EXTENSIONS))
    workers: int = 1


@dataclass
class PipelineConfig:
    base_dir: Path
    src: Path | None = None
    apis: Path | None = None
    work: Path = Path("work")
    seed: int = 0
    miner: MinerSection = field(default_factory=MinerSection)
    llm: LlmConfig = field(default_factory=LlmConfig)
    target: TargetConfig = field(default_factory=TargetConfig)
    policy: SelectionPolicy = field(default_factory=SelectionPolicy)
    synthesis: SynthesisConfig = field(default_factory=SynthesisConfig)
    analysis_workers: int = 1
    fuzz_workers: int = 1

    @classmethod
    def from_dict(cls, data: dict, base_dir: str | Path = ".") -> "PipelineConfig":
        base = Path(base_dir).resolve()
        known = {"paths", "miner", "llm", "target", "policy", "synthesis", "seed", "workers"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        try:
            paths = data.get("paths", {})
            bad = set(paths) - {"src", "apis", "work"}
            if bad:
                raise ConfigError(f"unknown paths keys: {sorted(bad)}")
            miner = MinerSection(**data.get("miner", {}))
            workers = data.get("workers", {})
            policy = SelectionPolicy.from_dict(data.get("policy", {}))
            seed = int(data.get("seed", policy.rng_seed))
            policy.rng_seed = seed
            return cls(
                base_dir=base,
                src=base / paths["src"] if paths.get("src") else None,
                apis=base / paths["apis"] if paths.get("apis") else None,
                work=base / paths.get("work", "work"),
                seed=seed,
                miner=miner,
                llm=LlmConfig.from_dict(data.get("llm", {})),
                target=TargetConfig.from_dict(data.get("target", {}), base),
                policy=policy,
                synthesis=SynthesisConfig.from_dict(data.get("synthesis", {})),
                analysis_workers=int(workers.get("analysis", 1)),
                fuzz_workers=int(workers.get("fuzz", 1)),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        return cls.from_dict(data, path.parent)


def _need(path: Path | None, what: str, flag: str = "") -> Path:
    if path is None:
        raise ConfigError(f"missing {what}" + (f"; pass {flag}" if flag else ""))
    if not path.exists():
        hint = f" (produced by the {what} stage)" if not flag else f" (set with {flag})"
        raise ConfigError(f"expected input file {path} is missing{hint}")
    return path


def _read_jsonl(path: Path) -> list[dict]:
    text = path.read_text(encoding="utf-8")
    return [json.loads(line) for line in text.splitlines() if line.strip()]


def _write_jsonl(path: Path, records) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def _load_apis(path: Path | None, flag: str = "--apis"):
    path = _need(path, "API catalog", flag)
    try:
        return load_catalog(path)
    except (CatalogError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


# --------------------------------------------------------------------------
# stages (each reads the previous stage's file artifact)


def stage_mine(src: Path, out: Path, macros, extensions, workers: int = 1) -> int:
    src = _need(src, "source tree", "--src")
    warnings: list = []
    blocks = mine_blocks(src, macros, extensions, workers=workers, warnings=warnings)
    _write_jsonl(out, (block_to_dict(b) for b in blocks))
    log.info("mine: %d blocks, %d warnings -> %s", len(blocks), len(warnings), out)
    return len(blocks)


def stage_analyze(blocks_path: Path, out: Path, gateway: LlmGateway, workers: int = 1) -> int:
    blocks = [block_from_dict(r) for r in _read_jsonl(_need(blocks_path, "mine"))]
    run = analyze_blocks(blocks, gateway, workers=workers)
    _write_jsonl(out, (c.to_dict() for c in run.cases))
    log.info("analyze: %d edge cases from %d blocks (%d failed) -> %s", len(run.cases), len(blocks),
             len(run.failed_blocks), out)
    return len(run.cases)


def stage_standardize(cases_path: Path, out: Path) -> int:
    cases = [ContextEdgeCase.from_dict(r) for r in _read_jsonl(_need(cases_path, "analyze"))]
    corpus = standardize_all(cases)
    out.parent.mkdir(parents=True, exist_ok=True)
    corpus.save(out)
    log.info("standardize: %d context-free edge cases in %d clusters -> %s", len(corpus),
             len(corpus.clusters), out)
    return len(corpus)


def stage_gen(apis_path: Path | None, out_dir: Path, gateway: LlmGateway, harness: Harness,
              cfg: SynthesisConfig):
    apis = _load_apis(apis_path)
    run = synthesize_all(apis, gateway, harness, cfg)
    write_programs(run, out_dir, harness.config.program_ext)
    log.info("gen: %d/%d APIs covered -> %s", run.covered, len(apis), out_dir)
    return run


def stage_fuzz(apis_path: Path | None, corpus_path: Path, programs_dir: Path, out_dir: Path,
               gateway: LlmGateway, harness: Harness, policy: SelectionPolicy, workers: int = 1):
    apis = _load_apis(apis_path)
    corpus = EdgeCaseCorpus.load(_need(corpus_path, "standardize"))
    _need(programs_dir, "gen")
    run = fuzz_all(apis, corpus, gateway, harness, policy, programs_dir, out_dir, workers)
    write_fuzz_outputs(run, out_dir)
    log.info("fuzz: %d tasks, %d unique bugs -> %s", len(run.records), len(run.bugs), out_dir)
    return run


# --------------------------------------------------------------------------
# reporting


def build_report(work: Path, apis_total: int | None = None, ledger: dict | None = None,
                 seed: int | None = None, stages=(), wall_time_s: float = 0.0) -> RunReport:
    """Assemble a RunReport purely from the artifacts in ``work``."""
    work = Path(work)
    counts = {}
    for name, key in ((BLOCKS, "blocks"), (CASES, "edge_cases"), (CORPUS, "corpus_records")):
        if (work / name).exists():
            counts[key] = len(_read_jsonl(work / name))
    synth = work / PROGRAMS / "synthesis_report.json"
    entries = load_synthesis_report(synth) if synth.exists() else []
    covered = sum(e["status"] == "valid" for e in entries)
    succeeded = sum(e["status"] == "valid" and (e["init_rounds"], e["debug_rounds"]) != (1, 0) for e in entries)
    failed = sum(e["status"] == "failed" for e in entries)
    if ledger is None and (work / LEDGER).exists():
        ledger = json.loads((work / LEDGER).read_text(encoding="utf-8"))
    by_stage = dict((ledger or {}).get("counters", {}))
    bugs_path = work / REPORTS / "bugs.jsonl"
    bugs: dict[str, int] = {}
    if bugs_path.exists():
        for rec in read_bug_reports(bugs_path):
            bugs[rec["outcome_class"]] = bugs.get(rec["outcome_class"], 0) + 1
        outcomes = work / REPORTS / "outcomes.jsonl"
        if outcomes.exists():
            counts["mutation_tasks"] = len(_read_jsonl(outcomes))
    total = apis_total if apis_total is not None else len(entries)
    return RunReport(api_total=total, api_covered=covered, llm_calls_by_stage=by_stage,
                     debug_success=DebugSuccess(succeeded, failed), bugs_by_class=dict(sorted(bugs.items())),
                     wall_time_s=round(wall_time_s, 3), seed=seed, stages=list(stages), counts=counts)


def run_pipeline(config: str | Path | PipelineConfig, stages=STAGES, seed: int | None = None) -> RunReport:
    cfg = config if isinstance(config, PipelineConfig) else PipelineConfig.load(config)
    if seed is not None:
        cfg.seed = seed
        cfg.policy.rng_seed = seed
    unknown = [s for s in stages if s not in STAGES]
    if unknown:
        raise ConfigError(f"unknown stages {unknown}; choose from {', '.join(STAGES)}")
    stages = [s for s in STAGES if s in stages]
    start = time.monotonic()
    work = cfg.work
    work.mkdir(parents=True, exist_ok=True)
    gateway = None
    if any(s in stages for s in ("analyze", "gen", "fuzz")):
        try:
            gateway = LlmGateway.from_config(cfg.llm, cfg.base_dir)
        except (ValueError, OSError) as exc:
            raise ConfigError(f"llm config: {exc}") from exc
    harness = Harness(cfg.target)
    apis_total = None
    if "mine" in stages:
        stage_mine(_need(cfg.src, "source tree", "paths.src"), work / BLOCKS, cfg.miner.macros,
                   cfg.miner.extensions, cfg.miner.workers)
    if "analyze" in stages:
        stage_analyze(work / BLOCKS, work / CASES, gateway, cfg.analysis_workers)
    if "standardize" in stages:
        stage_standardize(work / CASES, work / CORPUS)
    if "gen" in stages:
        run = stage_gen(cfg.apis, work / PROGRAMS, gateway, harness, cfg.synthesis)
        apis_total = len(run.programs)
    if "fuzz" in stages:
        stage_fuzz(cfg.apis, work / CORPUS, work / PROGRAMS, work / REPORTS, gateway, harness, cfg.policy,
                   cfg.fuzz_workers)
    ledger = gateway.ledger if gateway else CallLedger()
    (work / LEDGER).write_text(json.dumps(ledger.to_dict(), indent=2) + "\n", encoding="utf-8")
    if apis_total is None and cfg.apis is not None and cfg.apis.exists():
        apis_total = len(_load_apis(cfg.apis))
    report = build_report(work, apis_total, ledger.to_dict(), cfg.seed, stages, time.monotonic() - start)
    (work / RUN_REPORT).write_bytes(emit_report(report, "json"))
    (work / SUMMARY).write_bytes(emit_report(report, "text"))
    return report


# --------------------------------------------------------------------------
# argument handling


def _split(value: str | None) -> list[str] | None:
    return [v.strip() for v in value.split(",") if v.strip()] if value else None


def _gateway(args, cfg: PipelineConfig | None) -> LlmGateway:
    if args.llm_config:
        path = Path(args.llm_config)
        if not path.is_file():
            raise ConfigError(f"llm config not found: {path}")
        data = json.loads(path.read_text(encoding="utf-8"))
        llm, base = LlmConfig.from_dict(data.get("llm", data)), path.parent
    elif cfg is not None:
        llm, base = cfg.llm, cfg.base_dir
    else:
        raise ConfigError("missing LLM configuration; pass --llm-config or --config")
    return LlmGateway.from_config(llm, base)


def _harness(args, cfg: PipelineConfig | None) -> Harness:
    if getattr(args, "target", None):
        path = Path(args.target)
        if not path.is_file():
            raise ConfigError(f"target config not found: {path}")
        data = json.loads(path.read_text(encoding="utf-8"))
        return Harness(TargetConfig.from_dict(data.get("target", data), path.parent))
    return Harness(cfg.target if cfg else TargetConfig())


def _save_ledger(gateway: LlmGateway, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(gateway.ledger.to_dict(), indent=2) + "\n", encoding="utf-8")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edgefuzz", description="Edge-case driven API fuzzing toolkit.")
    parser.add_argument("--config", help="pipeline config JSON")
    parser.add_argument("--seed", type=int, help="seed for all randomness (overrides config)")
    parser.add_argument("--verbose", "-v", action="store_true")
    # the global flags are also accepted after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)
    add_parser = sub.add_parser

    def sub_add(name, **kw):
        return add_parser(name, parents=[common], **kw)

    sub.add_parser = sub_add

    p = sub.add_parser("mine", help="extract check-related code blocks from native sources")
    p.add_argument("--src")
    p.add_argument("--macros", help="comma-separated check macro names")
    p.add_argument("--ext", help="comma-separated file extensions")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("-o", "--output", default=BLOCKS)

    p = sub.add_parser("analyze", help="turn code blocks into context-based edge cases")
    p.add_argument("--blocks", default=BLOCKS)
    p.add_argument("--llm-config")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("-o", "--output", default=CASES)

    p = sub.add_parser("standardize", help="build the context-free edge-case corpus")
    p.add_argument("--cases", default=CASES)
    p.add_argument("-o", "--output", default=CORPUS)

    p = sub.add_parser("gen", help="synthesize a valid initial program per API")
    p.add_argument("--apis")
    p.add_argument("--llm-config")
    p.add_argument("--target", help="target config JSON")
    p.add_argument("-o", "--output", default=PROGRAMS)

    p = sub.add_parser("fuzz", help="mutate initial programs with matched edge cases")
    p.add_argument("--apis")
    p.add_argument("--corpus", default=CORPUS)
    p.add_argument("--programs", default=PROGRAMS)
    p.add_argument("--llm-config")
    p.add_argument("--target", help="target config JSON")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("-o", "--output", default=REPORTS)

    p = sub.add_parser("report", help="summarize the artifacts of a work directory")
    p.add_argument("--work", default=None)
    p.add_argument("--apis")
    p.add_argument("--format", choices=("json", "text"), default="text")

    p = sub.add_parser("run", help="run pipeline stages from a config file")
    p.add_argument("--stages", default=",".join(STAGES), help="comma-separated subset of " + ",".join(STAGES))
    p.add_argument("--format", choices=("json", "text"), default="text")
    return parser


def _dispatch(args) -> int:
    cfg = PipelineConfig.load(args.config) if args.config else None
    seed = args.seed if args.seed is not None else (cfg.seed if cfg else 0)
    cmd = args.command
    if cmd == "mine":
        src = Path(args.src) if args.src else (cfg.src if cfg else None)
        macros = _split(args.macros) or (cfg.miner.macros if cfg else sorted(DEFAULT_MACROS))
        exts = _split(args.ext) or (cfg.miner.extensions if cfg else sorted(DEFAULT_EXTENSIONS))
        exts = [e if e.startswith(".") else "." + e for e in exts]
        stage_mine(_need(src, "source tree", "--src"), Path(args.output), macros, exts, args.workers)
    elif cmd == "analyze":
        gateway = _gateway(args, cfg)
        stage_analyze(Path(args.blocks), Path(args.output), gateway, args.workers)
        _save_ledger(gateway, Path(args.output).with_suffix(".ledger.json"))
    elif cmd == "standardize":
        stage_standardize(Path(args.cases), Path(args.output))
    elif cmd == "gen":
        apis = Path(args.apis) if args.apis else (cfg.apis if cfg else None)
        if apis is None:
            raise ConfigError("gen: missing API catalog; pass --apis catalog.json")
        gateway = _gateway(args, cfg)
        harness = _harness(args, cfg)
        synth = cfg.synthesis if cfg else SynthesisConfig()
        stage_gen(apis, Path(args.output), gateway, harness, synth)
        _save_ledger(gateway, Path(args.output) / LEDGER)
    elif cmd == "fuzz":
        apis = Path(args.apis) if args.apis else (cfg.apis if cfg else None)
        if apis is None:
            raise ConfigError("fuzz: missing API catalog; pass --apis catalog.json")
        gateway = _gateway(args, cfg)
        harness = _harness(args, cfg)
        policy = cfg.policy if cfg else SelectionPolicy()
        policy.rng_seed = seed
        stage_fuzz(apis, Path(args.corpus), Path(args.programs), Path(args.output), gateway, harness, policy,
                   args.workers)
        _save_ledger(gateway, Path(args.output) / LEDGER)
    elif cmd == "report":
        work = Path(args.work) if args.work else (cfg.work if cfg else Path("."))
        apis = Path(args.apis) if args.apis else (cfg.apis if cfg else None)
        total = len(_load_apis(apis)) if apis else None
        sys.stdout.buffer.write(emit_report(build_report(work, total, seed=seed), args.format))
    elif cmd == "run":
        if cfg is None:
            raise ConfigError("run: missing pipeline config; pass --config")
        stages = _split(args.stages) or []
        report = run_pipeline(cfg, stages, seed)
        sys.stdout.buffer.write(emit_report(report, args.format))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (HarnessEnvironmentError, BackendUnavailable) as exc:
        print(f"environment error: {exc}", file=sys.stderr)
        return EXIT_ENV
    except LlmError as exc:
        print(f"llm error: {exc}", file=sys.stderr)
        return EXIT_ENV
    except (ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
