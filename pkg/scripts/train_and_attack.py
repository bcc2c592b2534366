"""Train once with snapshots of the final round, then replay the attack on them offline.

    python3 scripts/train_and_attack.py [--config FILE] [--out DIR]
"""
import argparse
import sys
from pathlib import Path

from ppfa.xprunner import cli

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path, default=CONFIGS / "train.toml")
    ap.add_argument("--out", type=Path, default=Path("out/train"))
    args = ap.parse_args()
    common = ["--config", str(args.config), "--out", str(args.out)]
    code = cli.main(common + ["train"])
    if code:
        return code
    snaps = sorted((args.out / "snapshots").glob("*.pfsnap"))
    if not snaps:
        print("no snapshots recorded (attack_round = 0?)")
        return 0
    code = cli.main(common + ["attack", "--snapshot", *map(str, snaps)])
    print((args.out / "attack.csv").read_text(encoding="utf-8"))
    return code


if __name__ == "__main__":
    sys.exit(main())
