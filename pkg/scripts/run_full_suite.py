#!/usr/bin/env python3
"""Run the default verification suite and print per-check verdicts.

Equivalent to `gruschin run configs/default.json`; exits nonzero on violations.
"""

import sys
from pathlib import Path

from gruschin.cli import main

if __name__ == "__main__":
    config = Path(__file__).resolve().parents[1] / "configs" / "default.json"
    sys.exit(main(["run", str(config), *sys.argv[1:]]))
