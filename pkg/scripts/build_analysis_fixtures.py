"""Write the analyzer replay fixture file from the hand-authored responses.

Responses and hand labels live in tests/fixtures/analysis/labeled_blocks.json;
this script keys each response by the canonical hash of the analysis prompt
for its block so the replay backend can serve it.

    python3 scripts/build_analysis_fixtures.py
"""

import json
from pathlib import Path

from edgefuzz.analyzer import build_analysis_prompt
from edgefuzz.llm import canonical_hash, write_fixtures
from edgefuzz.miner import mine_blocks

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = ROOT / "tests" / "fixtures"


def main() -> None:
    labeled = json.loads((FIXTURES / "analysis" / "labeled_blocks.json").read_text())
    blocks = {b.checks[0].enclosing_function: b for b in mine_blocks(FIXTURES / "native")}
    pairs = []
    for entry in labeled:
        block = blocks[entry["function"]]
        pairs.append((canonical_hash(build_analysis_prompt(block)), entry["response"]))
    out = FIXTURES / "analysis" / "replay.jsonl"
    write_fixtures(out, pairs)
    print(f"wrote {len(pairs)} fixtures to {out}")


if __name__ == "__main__":
    main()
