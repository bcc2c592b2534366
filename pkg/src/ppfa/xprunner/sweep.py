"""Budget sweeps: every budget x variant x seed is a full training run followed by an attack."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from ..metrics import SweepPoint, cap
from .config import ConfigError, ExperimentConfig
from .csvio import CsvAppender, write_csv
from .experiment import RunResult, run_experiment

TRADEOFF_COLUMNS = ("budget", "variant", "accuracy", "mean_utility_loss", "mean_distortion_norm",
                    "mse", "ssim", "empirical_leakage")
SEED_COLUMNS = ("seed",) + TRADEOFF_COLUMNS
CAP_COLUMNS = ("variant", "CAP")
_METRICS = TRADEOFF_COLUMNS[2:]


@dataclass
class SweepResult:
    rows: list[dict]
    seed_rows: list[dict]
    cap: dict[str, float]

    def points(self, variant: str) -> list[SweepPoint]:
        return [SweepPoint(r["budget"], r["accuracy"], r["mse"], r["empirical_leakage"], r["mse"], r["ssim"])
                for r in self.rows if r["variant"] == variant]

    def column(self, variant: str, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows if r["variant"] == variant])

    def seed_matrix(self, variant: str, name: str) -> np.ndarray:
        """(budgets, seeds) matrix of one metric."""
        budgets = sorted({r["budget"] for r in self.seed_rows})
        return np.array([[r[name] for r in self.seed_rows if r["variant"] == variant and r["budget"] == b]
                         for b in budgets])


def seed_row(res: RunResult) -> dict:
    t = res.trajectory
    return {"seed": res.seed, "budget": res.budget, "variant": res.variant,
            "accuracy": t.final_accuracy, "mean_utility_loss": t.mean_utility_loss,
            "mean_distortion_norm": t.mean_distortion_norm,
            "mse": res.mse, "ssim": res.ssim, "empirical_leakage": res.empirical_leakage}


def run_sweep(cfg: ExperimentConfig, out_dir: str | Path | None = None,
              progress: Callable[[dict], None] | None = None) -> SweepResult:
    if not cfg.budgets:
        raise ConfigError("budgets: a sweep needs at least one budget")
    if any(v is None for v in cfg.variant_list):
        raise ConfigError("variants: a sweep needs at least one protection mechanism")
    out = Path(out_dir or cfg.output_dir)
    seed_rows: list[dict] = []
    # per-seed rows are flushed as they finish so a failing point leaves partial results
    with CsvAppender(out / "tradeoff_seeds.csv", SEED_COLUMNS) as sink:
        for budget in cfg.budgets:
            for variant in cfg.variant_list:
                for seed in cfg.seed_list:
                    row = seed_row(run_experiment(cfg, variant, budget, seed))
                    seed_rows.append(row)
                    sink.append(row)
                    if progress is not None:
                        progress(row)

    rows = []
    for budget in cfg.budgets:
        for variant in cfg.variant_list:
            group = [r for r in seed_rows if r["budget"] == budget and r["variant"] == variant]
            row = {"budget": budget, "variant": variant}
            for name in _METRICS:
                row[name] = float(np.mean([r[name] for r in group]))
            rows.append(row)
    result = SweepResult(rows, seed_rows, {})
    result.cap = {v: cap(result.points(v)) for v in cfg.variant_list}
    write_csv(out / "tradeoff.csv", TRADEOFF_COLUMNS, rows)
    write_csv(out / "cap.csv", CAP_COLUMNS, [{"variant": v, "CAP": c} for v, c in result.cap.items()])
    return result
