"""FedSGD simulation with per-client distortion, shadow aggregates and utility-loss accounting.

A round, for every client k, starting from the shared iterate ``W_prev``:

1. sample a batch and take one local step ``W_local = W_prev - eta * clip(grad)``;
2. draw/learn the distortion ``delta_k`` for the configured mechanism;
3. upload ``W_local + delta_k``.

The server averages the uploads (weights n_k / n) into ``W_t`` and, for
accounting only, also averages the undistorted locals into the shadow ``W_shadow``.
The utility loss of client k is ``L_k(W_t) - L_k(W_shadow)`` on its own training split.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Protocol, Sequence

import numpy as np

from . import distortion as dist
from . import numkit
from .numkit import Batch, ModelSpec, ShapeError
from .privacy import DpParams, PrivacyBudget, PrivacyConstants, ShellBounds

LEARNER_ON_BATCH = "batch"
LEARNER_ON_CLIENT = "client"


class Task(Protocol):
    num_params: int

    def loss(self, params: np.ndarray, data: Any) -> float: ...

    def grad(self, params: np.ndarray, data: Any) -> np.ndarray: ...

    def batched_loss(self, rows: np.ndarray, data: Any) -> np.ndarray: ...

    def sample(self, data: Any, size: int, rng: np.random.Generator) -> Any: ...


@dataclass(frozen=True)
class ModelTask:
    """Cross-entropy classification with a :class:`ModelSpec` model on :class:`Batch` data."""

    spec: ModelSpec

    @property
    def num_params(self) -> int:
        return self.spec.num_params

    def loss(self, params, data: Batch) -> float:
        return numkit.forward_loss(self.spec, params, data)

    def grad(self, params, data: Batch) -> np.ndarray:
        return numkit.backward(self.spec, params, data)

    def batched_loss(self, rows, data: Batch) -> np.ndarray:
        return numkit.batched_loss(self.spec, rows, data)

    def sample(self, data: Batch, size: int, rng) -> Batch:
        if size >= len(data):
            return data
        return data.subset(np.sort(rng.choice(len(data), size=size, replace=False)))

    def accuracy(self, params, data: Batch) -> float:
        return float(np.mean(numkit.predict(self.spec, params, data.inputs) == data.classes))


@dataclass(frozen=True)
class ClientState:
    id: int
    data: Any
    n_k: int
    budgets: Sequence[PrivacyBudget] | None = None

    def budget(self, t: int) -> PrivacyBudget | None:
        """Budget for round ``t`` (1-based); the last entry repeats."""
        if not self.budgets:
            return None
        return self.budgets[min(t, len(self.budgets)) - 1]


@dataclass(frozen=True)
class FederationConfig:
    rounds: int = 200
    eta: float = 0.1
    batch_size: int = 4
    mechanism: str | None = None
    constants: PrivacyConstants = field(default_factory=PrivacyConstants)
    learner: dist.LearnerConfig = field(default_factory=dist.LearnerConfig)
    clip_norm: float | None = None
    sensitivity: float | None = None
    seed: int = 1
    learner_objective: str = LEARNER_ON_CLIENT
    attack_round: int | None = None
    keep_locals: bool = False

    def __post_init__(self):
        if self.rounds < 1:
            raise dist.ConfigError("rounds must be >= 1")
        if not self.eta >= 0:
            raise dist.ConfigError("eta must be >= 0")
        if self.batch_size < 1:
            raise dist.ConfigError("batch_size must be >= 1")
        if self.mechanism is not None:
            dist.framework_of(self.mechanism)
        if self.learner_objective not in (LEARNER_ON_BATCH, LEARNER_ON_CLIENT):
            raise dist.ConfigError(f"unknown learner_objective {self.learner_objective!r}")

    @property
    def dp_params(self) -> DpParams:
        s = self.sensitivity or self.clip_norm or 500.0
        return DpParams(eta=self.eta if self.eta > 0 else 1.0, sensitivity=s)


@dataclass(frozen=True)
class ClientRound:
    client: int
    budget: float
    l: float
    u: float
    distortion_norm: float
    utility_loss: float
    train_loss: float
    grad_norm: float


@dataclass(frozen=True)
class RoundRecord:
    t: int
    clients: tuple[ClientRound, ...]
    test_accuracy: float
    global_loss_prev: float
    grad_norm_sq: float
    aggregate_distortion_norm: float
    locals: tuple[np.ndarray, ...] | None = None
    shells: tuple[ShellBounds, ...] | None = None


@dataclass(frozen=True)
class RoundSnapshot:
    """What the server sees from one client in one round, plus the true batch for evaluation."""

    client: int
    t: int
    W_prev: np.ndarray
    W_client: np.ndarray
    eta: float
    batch: Any


@dataclass
class Trajectory:
    records: list[RoundRecord]
    W_final: np.ndarray
    W_shadow_final: np.ndarray
    global_loss_final: float
    snapshots: list[RoundSnapshot] = field(default_factory=list)

    @property
    def mean_utility_loss(self) -> float:
        return float(np.mean([c.utility_loss for r in self.records for c in r.clients]))

    @property
    def last_utility_loss(self) -> float:
        return float(np.mean([c.utility_loss for c in self.records[-1].clients]))

    @property
    def mean_distortion_norm(self) -> float:
        return float(np.mean([c.distortion_norm for r in self.records for c in r.clients]))

    @property
    def final_accuracy(self) -> float:
        return self.records[-1].test_accuracy


def round_rng(seed: int, stream: int, client: int, t: int) -> np.random.Generator:
    """Independent generator for one (client, round, purpose); order-independent by construction."""
    return np.random.default_rng([seed, stream, client, t])


def client_local_step(task: Task, W_t: np.ndarray, batch: Any, eta: float,
                      clip: float | None = None) -> np.ndarray:
    g = task.grad(W_t, batch)
    if clip is not None:
        g = numkit.clip_gradient(g, clip)
    return W_t - eta * g


def server_aggregate(params: Sequence[np.ndarray], weights: Sequence[float]) -> np.ndarray:
    if len(params) == 0 or len(params) != len(weights):
        raise ShapeError("need one weight per parameter vector and at least one vector")
    arrays = [np.asarray(p, dtype=np.float64) for p in params]
    if len({a.shape for a in arrays}) != 1:
        raise ShapeError("parameter vectors differ in length")
    stack = np.stack(arrays)
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w <= 0):
        raise ShapeError("aggregation weights must be positive")
    return (w / w.sum()) @ stack


def global_loss(task: Task, W: np.ndarray, clients: Sequence[ClientState]) -> float:
    w = np.array([c.n_k for c in clients], dtype=np.float64)
    return float((w / w.sum()) @ [task.loss(W, c.data) for c in clients])


def global_grad(task: Task, W: np.ndarray, clients: Sequence[ClientState]) -> np.ndarray:
    return server_aggregate([task.grad(W, c.data) for c in clients], [c.n_k for c in clients])


def _distort(task, client, W_local, batch, t, cfg: FederationConfig):
    budget = client.budget(t)
    if cfg.mechanism is None or budget is None:
        return np.zeros_like(W_local), ShellBounds(0.0, 0.0), float("nan")
    target = batch if cfg.learner_objective == LEARNER_ON_BATCH else client.data

    def grad_at(delta):
        return task.grad(W_local + delta, target)

    delta, shell = dist.make_distortion(
        cfg.mechanism, grad_at, W_local, budget, cfg.constants, cfg.learner,
        round_rng(cfg.seed, 1, client.id, t), dp=cfg.dp_params,
    )
    return delta, shell, budget.chi


def run_round(task: Task, clients: Sequence[ClientState], W_prev: np.ndarray, t: int,
              cfg: FederationConfig, test: Any = None):
    """One FedSGD round. Returns ``(W_t, W_shadow, RoundRecord, snapshots)``."""
    if t < 1:
        raise ValueError("rounds are numbered from 1")
    # a fixed client order keeps aggregation sums bit-identical however clients are listed
    clients = sorted(clients, key=lambda c: c.id)
    weights = [c.n_k for c in clients]
    locals_, uploads, deltas, shells, budgets, batches, grad_norms = [], [], [], [], [], [], []
    for c in clients:
        batch = task.sample(c.data, cfg.batch_size, round_rng(cfg.seed, 0, c.id, t))
        g = task.grad(W_prev, batch)
        if cfg.clip_norm is not None:
            g = numkit.clip_gradient(g, cfg.clip_norm)
        W_local = W_prev - cfg.eta * g
        delta, shell, chi = _distort(task, c, W_local, batch, t, cfg)
        locals_.append(W_local)
        uploads.append(W_local + delta)
        deltas.append(delta)
        shells.append(shell)
        budgets.append(chi)
        batches.append(batch)
        grad_norms.append(float(np.linalg.norm(g)))

    W_t = server_aggregate(uploads, weights)
    W_shadow = server_aggregate(locals_, weights)
    agg_delta = server_aggregate(deltas, weights)
    g_global = global_grad(task, W_prev, clients)

    rows = []
    for c, delta, shell, chi, batch, gn in zip(clients, deltas, shells, budgets, batches, grad_norms):
        rows.append(ClientRound(
            client=c.id, budget=chi, l=shell.l, u=shell.u,
            distortion_norm=float(np.linalg.norm(delta)),
            utility_loss=task.loss(W_t, c.data) - task.loss(W_shadow, c.data),
            train_loss=task.loss(W_prev, batch), grad_norm=gn,
        ))
    acc = float("nan")
    if test is not None and hasattr(task, "accuracy"):
        acc = task.accuracy(W_t, test)
    record = RoundRecord(
        t=t, clients=tuple(rows), test_accuracy=acc,
        global_loss_prev=global_loss(task, W_prev, clients),
        grad_norm_sq=float(g_global @ g_global),
        aggregate_distortion_norm=float(np.linalg.norm(agg_delta)),
        locals=tuple(locals_) if cfg.keep_locals else None,
        shells=tuple(shells) if cfg.keep_locals else None,
    )
    snaps = []
    if cfg.attack_round == t:
        snaps = [RoundSnapshot(c.id, t, W_prev.copy(), up, cfg.eta, b)
                 for c, up, b in zip(clients, uploads, batches)]
    return W_t, W_shadow, record, snaps


def run_training(task: Task, clients: Sequence[ClientState], cfg: FederationConfig,
                 W0: np.ndarray | None = None, test: Any = None) -> Trajectory:
    if not clients:
        raise dist.ConfigError("need at least one client")
    if len({c.id for c in clients}) != len(clients):
        raise dist.ConfigError("client ids must be unique")
    W = np.zeros(task.num_params) if W0 is None else np.array(W0, dtype=np.float64)
    records, snapshots = [], []
    W_shadow = W
    for t in range(1, cfg.rounds + 1):
        W, W_shadow, rec, snaps = run_round(task, clients, W, t, cfg, test)
        records.append(rec)
        snapshots.extend(snaps)
    return Trajectory(records, W, W_shadow, global_loss(task, W, clients), snapshots)
