"""Regenerate the golden prompt and report files under tests/fixtures/golden.

    python3 scripts/build_golden.py

Review the resulting diff before committing; the goldens are only useful if
someone has read them.
"""

import os
import subprocess
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    env = dict(os.environ, EDGEFUZZ_REGEN_GOLDEN="1")
    sys.exit(subprocess.call([sys.executable, "-m", "pytest", "-q", str(ROOT / "tests" / "test_golden.py")],
                             cwd=ROOT, env=env))
