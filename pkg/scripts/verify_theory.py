"""Run every numerical theory check on the shipped PL and DP runs.

    python3 scripts/verify_theory.py [--out DIR]

Exits non-zero when any check fails.
"""
import argparse
import sys
from pathlib import Path

from ppfa.xprunner import cli

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("out"))
    args = ap.parse_args()
    worst = 0
    for name in ("theory_pl", "theory_dp"):
        code = cli.main(["--config", str(CONFIGS / f"{name}.toml"), "--out", str(args.out / name),
                         "verify-theory"])
        print(f"{name}: exit {code}, report in {args.out / name / 'theory_report.csv'}")
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    sys.exit(main())
