#!/usr/bin/env python3
"""
NAME demand estimation command line

Usage:
    python name_cli.py simulate --config misspec.json --out runs/a
    python name_cli.py estimate --dataset runs/a/dataset.json --out runs/a --estimator name
    python name_cli.py benchmark --config misspec.json --out runs/bench --replications 50
    python name_cli.py recover-support --dataset runs/s/dataset.json --out runs/s
"""

import sys
from pathlib import Path

# Add current directory to path for imports
sys.path.insert(0, str(Path(__file__).parent))

from name_demand.cli import app

if __name__ == "__main__":
    app()
