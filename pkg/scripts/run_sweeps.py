"""Run the shipped PL and DP budget sweeps and print the trade-off tables.

    python3 scripts/run_sweeps.py [--out DIR]
"""
import argparse
import time
from pathlib import Path

from ppfa.xprunner.config import load_config
from ppfa.xprunner.sweep import run_sweep

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=None, help="root output directory (default: each config's)")
    args = ap.parse_args()
    for name in ("sweep_pl", "sweep_dp"):
        cfg = load_config(CONFIGS / f"{name}.toml")
        out = args.out / name if args.out else cfg.resolve_path(cfg.output_dir)
        t0 = time.perf_counter()
        res = run_sweep(cfg, out)
        print(f"== {name} ({time.perf_counter() - t0:.0f} s) -> {out}")
        print(f"{'budget':>8} {'variant':>14} {'accuracy':>9} {'mse':>7} {'ssim':>7} {'leakage':>8}")
        for r in res.rows:
            print(f"{r['budget']:>8g} {r['variant']:>14} {r['accuracy']:>9.4f} {r['mse']:>7.4f} "
                  f"{r['ssim']:>7.4f} {r['empirical_leakage']:>8.4f}")
        for v, c in res.cap.items():
            print(f"CAP {v}: {c:.4f}")


if __name__ == "__main__":
    main()
