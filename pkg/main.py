"""
Entry point for the positive-matrix random walk laboratory

Usage:
    python main.py selftest
    python main.py verify thm1 --config configs/thm1.json --out results
"""
import sys
from pathlib import Path

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent))

from src.cli import run_cli


if __name__ == "__main__":
    sys.exit(run_cli(sys.argv[1:]))
