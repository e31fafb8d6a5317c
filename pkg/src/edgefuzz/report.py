"""Run reports: coverage, LLM usage, debug success and bug counts."""

from __future__ import annotations

import json
from dataclasses import dataclass, field


@dataclass
class DebugSuccess:
    succeeded: int = 0
    failed: int = 0

    @property
    def rate(self) -> float | None:
        total = self.succeeded + self.failed
        return self.succeeded / total if total else None

    def to_dict(self) -> dict:
        out: dict = {"succeeded": self.succeeded, "failed": self.failed}
        if self.rate is not None:
            out["rate"] = self.rate
        return out


@dataclass
class RunReport:
    api_total: int = 0
    api_covered: int = 0
    llm_calls_by_stage: dict[str, int] = field(default_factory=dict)
    debug_success: DebugSuccess = field(default_factory=DebugSuccess)
    bugs_by_class: dict[str, int] = field(default_factory=dict)
    wall_time_s: float = 0.0
    seed: int | None = None
    stages: list[str] = field(default_factory=list)
    counts: dict[str, int] = field(default_factory=dict)  # blocks, edge cases, corpus records, tasks

    def __post_init__(self) -> None:
        if self.api_covered > self.api_total:
            raise ValueError("api_covered cannot exceed api_total")

    @property
    def generation_calls(self) -> int:
        return self.llm_calls_by_stage.get("generation", 0) + self.llm_calls_by_stage.get("debug", 0)

    def to_dict(self) -> dict:
        return {
            "api_total": self.api_total,
            "api_covered": self.api_covered,
            "llm_calls_by_stage": dict(self.llm_calls_by_stage),
            "debug_success": self.debug_success.to_dict(),
            "bugs_by_class": dict(self.bugs_by_class),
            "wall_time_s": self.wall_time_s,
            "seed": self.seed,
            "stages": list(self.stages),
            "counts": dict(self.counts),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunReport":
        ds = data.get("debug_success", {})
        return cls(
            api_total=data.get("api_total", 0),
            api_covered=data.get("api_covered", 0),
            llm_calls_by_stage=dict(data.get("llm_calls_by_stage", {})),
            debug_success=DebugSuccess(ds.get("succeeded", 0), ds.get("failed", 0)),
            bugs_by_class=dict(data.get("bugs_by_class", {})),
            wall_time_s=data.get("wall_time_s", 0.0),
            seed=data.get("seed"),
            stages=list(data.get("stages", [])),
            counts=dict(data.get("counts", {})),
        )


def _table(headers: list[str], rows: list[list[str]]) -> list[str]:
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(headers)]
    line = "  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip()
    out = [line, "  ".join("-" * w for w in widths)]
    for row in rows:
        out.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    return out


def render_text(report: RunReport) -> str:
    lines = []
    cov = 100.0 * report.api_covered / report.api_total if report.api_total else None
    per_api = report.generation_calls / report.api_total if report.api_total else None
    headers = ["APIs", "Covered"] + (["Cov(%)"] if cov is not None else []) + ["Times"] + \
              (["Times/API"] if per_api is not None else [])
    row = [str(report.api_total), str(report.api_covered)] + ([f"{cov:.1f}"] if cov is not None else []) + \
          [str(report.generation_calls)] + ([f"{per_api:.2f}"] if per_api is not None else [])
    lines.append("API coverage (Times = generation + debug LLM calls)")
    lines += _table(headers, [row])
    lines.append("")
    ds = report.debug_success
    headers = ["Succeeded", "Failed"] + (["Rate(%)"] if ds.rate is not None else [])
    row = [str(ds.succeeded), str(ds.failed)] + ([f"{100 * ds.rate:.1f}"] if ds.rate is not None else [])
    lines.append("Debug success")
    lines += _table(headers, [row])
    lines.append("")
    lines.append("LLM calls by stage")
    lines += _table(["Stage", "Calls"], [[k, str(v)] for k, v in report.llm_calls_by_stage.items()])
    lines.append("")
    lines.append("Bugs by class")
    if report.bugs_by_class:
        lines += _table(["Class", "Bugs"], [[k, str(v)] for k, v in report.bugs_by_class.items()])
    else:
        lines.append("(none)")
    if report.counts:
        lines.append("")
        lines.append("Artifacts: " + ", ".join(f"{k}={v}" for k, v in report.counts.items()))
    lines.append("")
    seed = "-" if report.seed is None else str(report.seed)
    lines.append(f"seed {seed}, wall time {report.wall_time_s:.1f}s")
    return "\n".join(lines) + "\n"


def emit_report(report: RunReport, fmt: str = "json") -> bytes:
    if fmt == "json":
        return (json.dumps(report.to_dict(), indent=2) + "\n").encode("utf-8")
    if fmt == "text":
        return render_text(report).encode("utf-8")
    raise ValueError(f"unknown report format {fmt!r}")

