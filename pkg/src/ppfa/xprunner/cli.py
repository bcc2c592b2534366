"""Command-line entry point: ``ppfa-xp [--config F] [--seed N] [--out D] <subcommand>``.

Exit codes: 0 success, 1 runtime error, 2 configuration error, 3 failed check.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .. import distortion as dist
from ..attack import attack_snapshot, bayesian_constants, empirical_leakage, prepare_models, \
    reconstruction_scores, recovery_frequency
from ..numkit import NumericError, ParameterError, ShapeError
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .csvio import write_csv
from .data import FormatError
from .experiment import load_data, run_experiment, split_clients
from .snapshot import load_snapshot, save_round_snapshot, spec_from_meta
from .sweep import run_sweep

log = logging.getLogger("ppfa.xprunner")

ROUND_COLUMNS = ("t", "client", "budget", "l", "u", "distortion_norm", "utility_loss", "train_loss",
                 "grad_norm", "test_accuracy", "global_loss_prev", "grad_norm_sq", "aggregate_distortion_norm")
SUMMARY_COLUMNS = ("seed", "variant", "budget", "accuracy", "mean_utility_loss", "last_utility_loss",
                   "mean_distortion_norm", "global_loss_final")
ATTACK_COLUMNS = ("source", "client", "round", "iterations", "final_objective", "mse", "ssim",
                  "empirical_leakage")
EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_CHECK = 0, 1, 2, 3


def _single(cfg: ExperimentConfig) -> tuple[str | None, float | None]:
    variant = cfg.variant_list[0]
    return variant, (cfg.budgets[0] if cfg.budgets and variant is not None else None)


def round_rows(traj) -> list[dict]:
    rows = []
    for rec in traj.records:
        for c in rec.clients:
            rows.append({"t": rec.t, "client": c.client, "budget": c.budget, "l": c.l, "u": c.u,
                         "distortion_norm": c.distortion_norm, "utility_loss": c.utility_loss,
                         "train_loss": c.train_loss, "grad_norm": c.grad_norm,
                         "test_accuracy": rec.test_accuracy, "global_loss_prev": rec.global_loss_prev,
                         "grad_norm_sq": rec.grad_norm_sq,
                         "aggregate_distortion_norm": rec.aggregate_distortion_norm})
    return rows


def cmd_train(cfg: ExperimentConfig, out: Path, args) -> int:
    variant, budget = _single(cfg)
    res = run_experiment(cfg, variant, budget, cfg.seed, attack=False)
    t = res.trajectory
    write_csv(out / "rounds.csv", ROUND_COLUMNS, round_rows(t))
    write_csv(out / "summary.csv", SUMMARY_COLUMNS, [{
        "seed": cfg.seed, "variant": variant or "none", "budget": budget, "accuracy": t.final_accuracy,
        "mean_utility_loss": t.mean_utility_loss, "last_utility_loss": t.last_utility_loss,
        "mean_distortion_norm": t.mean_distortion_norm, "global_loss_final": t.global_loss_final}])
    snap_dir = out / "snapshots"
    for snap in t.snapshots:
        snap_dir.mkdir(parents=True, exist_ok=True)
        save_round_snapshot(snap_dir / f"round{snap.t}_client{snap.client}.pfsnap", snap, cfg.model,
                            {"variant": variant or "none", "seed": str(cfg.seed)})
    log.info("final test accuracy %.4f", t.final_accuracy)
    return EXIT_OK


def cmd_sweep(cfg: ExperimentConfig, out: Path, args) -> int:
    def progress(row):
        log.info("seed %s budget %s %s: acc %.4f mse %.4f", row["seed"], row["budget"], row["variant"],
                 row["accuracy"], row["mse"])

    result = run_sweep(cfg, out, progress)
    for v, c in result.cap.items():
        log.info("CAP %s = %.6f", v, c)
    return EXIT_OK


def cmd_attack(cfg: ExperimentConfig, out: Path, args) -> int:
    acfg = cfg.attack.to_attack_config()
    rows = []
    if args.snapshot:
        for path in args.snapshot:
            snap, meta = load_snapshot(path)
            res = attack_snapshot(snap, spec_from_meta(meta), acfg)
            err, sim = reconstruction_scores(res, snap.batch.inputs)
            rows.append({"source": Path(path).name, "client": snap.client, "round": snap.t,
                         "iterations": res.iterations, "final_objective": float(res.objective[-1]),
                         "mse": err, "ssim": sim, "empirical_leakage": empirical_leakage(res, cfg.privacy.D)})
    else:
        if cfg.attack_round == 0:
            raise ConfigError("attack_round: 0 disables the attack; set a round or pass --snapshot")
        variant, budget = _single(cfg)
        res = run_experiment(cfg, variant, budget, cfg.seed)
        rows = [{"source": "run", **r} for r in res.attack_rows]
    write_csv(out / "attack.csv", ATTACK_COLUMNS, rows)
    return EXIT_OK


def cmd_verify_theory(cfg: ExperimentConfig, out: Path, args) -> int:
    from . import theory

    th = cfg.theory
    report = theory.verify_contraction(instances=th.contraction_instances, seed=cfg.seed)
    report.extend(theory.verify_theorem1(theory.QuadraticSuite(seed=cfg.seed)))
    live = []
    for variant in cfg.variant_list:
        for budget in (cfg.budgets if variant is not None else (None,)):
            run_report, instances = theory.check_run(cfg, variant, budget, cfg.seed)
            report.extend(run_report)
            live.extend(instances)
    report.extend(theory.verify_inner_product_identity(th.identity_instances, seed=cfg.seed, live=live))
    write_csv(out / "theory_report.csv", theory.REPORT_COLUMNS, report.rows)
    for row in report.failures():
        log.error("FAILED %s [%s]: %r > %r", row["check"], row["instance"], row["lhs"], row["rhs"])
    log.info("%d checks, %d failed", len(report.rows), len(report.failures()))
    return EXIT_OK if report.passed else EXIT_CHECK


def cmd_estimate_constants(cfg: ExperimentConfig, out: Path, args) -> int:
    cs = cfg.constants
    train, _ = load_data(cfg, cfg.seed)
    client = split_clients(train, cfg.clients, None, None)[0]
    models = prepare_models(client.data, cfg.model, cs.local_steps, cs.models, cfg.eta, cfg.seed,
                            cfg.batch_size)
    batch = client.data.subset(np.arange(min(cs.datums, len(client.data))))
    freq = recovery_frequency(models, batch, cs.threshold, cfg.model, cfg.attack.to_attack_config(),
                              cfg.eta, cs.attempts, cs.similarity)
    kappa1, kappa3 = freq.mean(axis=0), freq.max(axis=0)
    kappa2 = 1.0 / cfg.model.num_classes
    write_csv(out / "kappas.csv", ("datum", "kappa1", "kappa2", "kappa3"),
              [{"datum": d, "kappa1": float(k1), "kappa2": kappa2, "kappa3": float(k3)}
               for d, (k1, k3) in enumerate(zip(kappa1, kappa3))])
    c1, c2 = bayesian_constants(kappa1, kappa2, kappa3)
    write_csv(out / "constants.csv", ("name", "value"), [{"name": "C1", "value": c1}, {"name": "C2", "value": c2}])
    log.info("C1 = %.6g, C2 = %.6g", c1, c2)
    return EXIT_OK


COMMANDS = {"train": cmd_train, "sweep": cmd_sweep, "attack": cmd_attack,
            "verify-theory": cmd_verify_theory, "estimate-constants": cmd_estimate_constants}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="TOML experiment config")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override the config seed(s)")
    common.add_argument("--out", type=Path, default=argparse.SUPPRESS, help="output directory")
    p = argparse.ArgumentParser(prog="ppfa-xp", parents=[common],
                                description="Distortion-learning federated experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "attack":
            sp.add_argument("--snapshot", nargs="+", type=Path, help="attack recorded snapshot files")
    return p


def resolve(args) -> tuple[ExperimentConfig, Path]:
    config = getattr(args, "config", None)
    cfg = load_config(config) if config else parse_config({})
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    out = Path(args.out) if getattr(args, "out", None) else cfg.resolve_path(cfg.output_dir)
    return cfg, out


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        cfg, out = resolve(args)
        out.mkdir(parents=True, exist_ok=True)
        if cfg.defaults_applied:
            log.info("defaults applied: %s", ", ".join(cfg.defaults_applied))
        (out / "config.resolved.json").write_text(cfg.to_json() + "\n", encoding="utf-8")
        return COMMANDS[args.command](cfg, out, args)
    except (ConfigError, dist.ConfigError) as e:
        log.error("config error: %s", e)
        return EXIT_CONFIG
    except (FormatError, ParameterError, ShapeError, NumericError, OSError) as e:
        log.error("%s: %s", type(e).__name__, e)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
