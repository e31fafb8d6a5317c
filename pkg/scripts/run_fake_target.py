"""Run the whole pipeline on the bundled toy target and compare with its planted bugs.

    python3 scripts/run_fake_target.py --work /tmp/toy-run

Uses the offline rule backend, so no endpoint or key is needed.
"""

import argparse
import json
import sys
from pathlib import Path

from edgefuzz.cli import PipelineConfig, run_pipeline
from edgefuzz.mutator import read_bug_reports
from edgefuzz.report import render_text

TARGET = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "target"


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--work", default="work/toy", help="output directory for pipeline artifacts")
    parser.add_argument("--seed", type=int)
    args = parser.parse_args(argv)

    cfg = PipelineConfig.load(TARGET / "pipeline.json")
    cfg.work = Path(args.work).resolve()
    report = run_pipeline(cfg, seed=args.seed)
    print(render_text(report), end="")

    seeded = json.loads((TARGET / "seeded_bugs.json").read_text())
    expected = {(b["api"], b["class"]) for b in seeded["bugs"]}
    found = {(b["api"], b["outcome_class"]) for b in read_bug_reports(cfg.work / "reports" / "bugs.jsonl")}
    print(f"\nplanted bugs found: {len(expected & found)}/{len(expected)}")
    for api, cls in sorted(expected - found):
        print(f"  missed {api} ({cls})")
    for api, cls in sorted(found - expected):
        print(f"  unexpected {api} ({cls})")
    return 0 if found == expected else 1


if __name__ == "__main__":
    sys.exit(main())
