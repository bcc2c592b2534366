"""Wiring from an :class:`ExperimentConfig` to data, clients, training runs and attacks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import distortion as dist
from ..attack import attack_snapshot, empirical_leakage, reconstruction_scores
from ..federation import ClientState, FederationConfig, ModelTask, Trajectory, run_training
from ..numkit import Batch
from ..privacy import PrivacyBudget
from .config import BLOBS, ConfigError, ExperimentConfig
from .data import load_idx, synth_dataset


def load_data(cfg: ExperimentConfig, seed: int) -> tuple[Batch, Batch]:
    """(train, test) for the configured dataset; blobs are regenerated per seed."""
    d, spec = cfg.dataset, cfg.model
    if d.kind == BLOBS:
        kw = dict(classes=spec.num_classes, dim=spec.input_dim, sigma=d.sigma, low=d.low, high=d.high)
        train = synth_dataset(per_class=d.per_class, seed=[seed, 0], **kw)
        test = synth_dataset(per_class=d.test_per_class, seed=[seed, 1], **kw)
        return train, test
    side = d.side or None
    train = load_idx(cfg.resolve_path(d.train_images), cfg.resolve_path(d.train_labels),
                     spec.num_classes, side, d.limit or None)
    test = load_idx(cfg.resolve_path(d.test_images), cfg.resolve_path(d.test_labels),
                    spec.num_classes, side, d.test_limit or None)
    if train.inputs.shape[1] != spec.input_dim:
        raise ConfigError(f"model.input_dim: data has {train.inputs.shape[1]} features, "
                          f"model expects {spec.input_dim}")
    return train, test


def split_clients(train: Batch, K: int, variant: str | None, budget: float | None) -> list[ClientState]:
    """Interleaved split of ``train`` across K clients, all with the same constant budget."""
    if len(train) < K:
        raise ConfigError(f"clients: {K} clients but only {len(train)} training samples")
    budgets = None
    if variant is not None:
        budgets = (PrivacyBudget(budget, dist.framework_of(variant)),)
    clients = []
    for k in range(K):
        part = train.subset(np.arange(k, len(train), K))
        clients.append(ClientState(id=k, data=part, n_k=len(part), budgets=budgets))
    return clients


def federation_config(cfg: ExperimentConfig, variant: str | None, seed: int,
                      keep_locals: bool = False) -> FederationConfig:
    return FederationConfig(
        rounds=cfg.rounds, eta=cfg.eta, batch_size=cfg.batch_size, mechanism=variant,
        constants=cfg.privacy, learner=cfg.learner, clip_norm=cfg.clip_for(variant), seed=seed,
        learner_objective=cfg.learner_objective,
        attack_round=cfg.attack_round if cfg.attack.enabled and cfg.attack_round > 0 else None,
        keep_locals=keep_locals,
    )


@dataclass
class RunResult:
    variant: str | None
    budget: float | None
    seed: int
    trajectory: Trajectory
    clients: list[ClientState]
    attack_rows: list[dict]

    @property
    def mse(self) -> float:
        return float(np.mean([r["mse"] for r in self.attack_rows])) if self.attack_rows else float("nan")

    @property
    def ssim(self) -> float:
        return float(np.mean([r["ssim"] for r in self.attack_rows])) if self.attack_rows else float("nan")

    @property
    def empirical_leakage(self) -> float:
        if not self.attack_rows:
            return float("nan")
        return float(np.mean([r["empirical_leakage"] for r in self.attack_rows]))


def attack_rows(trajectory: Trajectory, cfg: ExperimentConfig) -> list[dict]:
    acfg = cfg.attack.to_attack_config()
    rows = []
    for snap in trajectory.snapshots:
        res = attack_snapshot(snap, cfg.model, acfg)
        err, sim = reconstruction_scores(res, snap.batch.inputs)
        rows.append({"client": snap.client, "round": snap.t, "iterations": res.iterations,
                     "final_objective": float(res.objective[-1]) if res.iterations else float("nan"),
                     "mse": err, "ssim": sim,
                     "empirical_leakage": empirical_leakage(res, cfg.privacy.D)})
    return rows


def run_experiment(cfg: ExperimentConfig, variant: str | None, budget: float | None, seed: int,
                   keep_locals: bool = False, attack: bool = True) -> RunResult:
    train, test = load_data(cfg, seed)
    clients = split_clients(train, cfg.clients, variant, budget)
    task = ModelTask(cfg.model)
    W0 = cfg.model.init_params(np.random.default_rng([seed, 2]))
    traj = run_training(task, clients, federation_config(cfg, variant, seed, keep_locals), W0=W0, test=test)
    rows = attack_rows(traj, cfg) if attack else []
    return RunResult(variant, budget, seed, traj, clients, rows)
