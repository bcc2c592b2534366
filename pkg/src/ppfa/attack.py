"""Gradient-inversion attack of a semi-honest server, and the estimators built on it.

The attacker sees ``W_prev`` and a client's upload, recovers the (distorted)
gradient ``(W_prev - W_client) / eta`` and optimizes candidate inputs so that
their gradient matches it. Labels are assumed known.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from . import numkit
from .metrics import mse, ssim
from .numkit import (MLP_1HIDDEN, SOFTMAX_REGRESSION, AdamState, Batch, ModelSpec,
                     ParameterError, adam_step, softmax)


class CapabilityError(NotImplementedError):
    """The attack does not support the requested model."""


class NotRecoverable(ValueError):
    """The observed gradient is not consistent with any single input."""


@dataclass(frozen=True)
class AttackConfig:
    iterations: int = 1600
    lr: float = 1.0
    tv_coefficient: float = 1e-5
    known_label: bool = True
    init_seed: int = 0
    lr_decay: bool = True
    boxed: bool = True
    fd_step: float = 1e-4
    keep_every: int = 100

    def __post_init__(self):
        if self.iterations < 0:
            raise ParameterError("iterations must be >= 0")
        if not self.lr > 0:
            raise ParameterError("lr must be positive")
        if self.tv_coefficient < 0:
            raise ParameterError("tv_coefficient must be >= 0")
        if not self.known_label:
            raise CapabilityError("label inference is not supported; known_label must be true")

    def lr_at(self, i: int) -> float:
        """Step-decayed learning rate (x0.1 at 3/8, 5/8 and 7/8 of the run)."""
        if not self.lr_decay:
            return self.lr
        n = self.iterations
        milestones = (int(n / 2.667), int(n / 1.6), int(n / 1.142))
        return self.lr * 0.1 ** sum(i >= m for m in milestones)


@dataclass
class AttackResult:
    estimates: list[np.ndarray]
    estimate_steps: list[int]
    distances: np.ndarray
    final: np.ndarray
    objective: np.ndarray

    @property
    def iterations(self) -> int:
        return len(self.objective)


def observed_gradient_from_update(W_prev, W_client, eta: float) -> np.ndarray:
    if not eta > 0:
        raise ParameterError("eta must be positive")
    return (np.asarray(W_prev, dtype=np.float64) - np.asarray(W_client, dtype=np.float64)) / eta


def total_variation(x: np.ndarray) -> float:
    """Sum of squared differences of neighbouring entries, per row of ``x``."""
    d = np.diff(np.atleast_2d(x), axis=1)
    return float((d * d).sum())


def _tv_grad(x: np.ndarray) -> np.ndarray:
    d = np.diff(x, axis=1)
    g = np.zeros_like(x)
    g[:, 1:] += 2 * d
    g[:, :-1] -= 2 * d
    return g


def _linear_objective(x, W, y, g_obs, tv):
    """Value and input-gradient of ||G(x) - g_obs||^2 + tv * TV(x) for softmax regression."""
    n = x.shape[0]
    p = softmax(x @ W.T)
    a = p - y
    R = a.T @ x / n - g_obs
    value = float((R * R).sum()) + tv * total_variation(x)
    Rx = x @ R.T                                  # (n, C): rows R x_b
    JRx = p * Rx - p * (p * Rx).sum(axis=1, keepdims=True)
    grad = 2.0 / n * (a @ R + JRx @ W)
    if tv:
        grad = grad + tv * _tv_grad(x)
    return value, grad


def matching_objective(spec: ModelSpec, W: np.ndarray, labels: np.ndarray,
                       g_obs: np.ndarray, tv: float, x: np.ndarray) -> float:
    x = np.atleast_2d(x)
    g = numkit.backward(spec, W, Batch(x, labels))
    r = g - g_obs
    return float(r @ r) + tv * total_variation(x)


def _fd_objective(spec, W, labels, g_obs, tv, x, h):
    """Matching objective and its central-difference input gradient, all probes evaluated at once.

    Moving entry (b, j) only changes datum b's own gradient, so each probe's
    batch gradient is the unperturbed sum with row b swapped out.
    """
    n, m = x.shape
    rows = numkit.per_sample_grads(spec, W, x, labels)
    total = rows.sum(axis=0)
    r = total / n - g_obs
    value = float(r @ r) + tv * total_variation(x)

    steps = np.concatenate([np.eye(m) * h, -np.eye(m) * h])        # (2m, m)
    probes = (x[:, None, :] + steps[None]).reshape(-1, m)          # (n*2m, m), datum-major
    owner = np.repeat(np.arange(n), 2 * m)
    g_probe = numkit.per_sample_grads(spec, W, probes, labels[owner])
    resid = (total[None] - rows[owner] + g_probe) / n - g_obs
    vals = np.einsum("ij,ij->i", resid, resid)
    if tv:
        xs = np.broadcast_to(x, (n * 2 * m, n, m)).copy()
        xs[np.arange(n * 2 * m), owner] = probes
        vals = vals + tv * (np.diff(xs, axis=2) ** 2).sum(axis=(1, 2))
    vals = vals.reshape(n, 2, m)
    return value, (vals[:, 0] - vals[:, 1]) / (2 * h)


def invert_gradient(g_obs, W, labels, spec: ModelSpec, cfg: AttackConfig,
                    true_inputs: np.ndarray | None = None,
                    init: np.ndarray | None = None) -> AttackResult:
    """Adam on the gradient-matching objective, starting from seeded standard normal inputs.

    ``labels`` is one-hot, one row per datum to reconstruct. When
    ``true_inputs`` is given, the mean per-datum distance to it is recorded
    after every iteration.
    """
    if spec.kind not in (SOFTMAX_REGRESSION, MLP_1HIDDEN):
        raise CapabilityError(f"no attack for model kind {spec.kind!r}")
    labels = np.atleast_2d(np.asarray(labels, dtype=np.float64))
    g_obs = np.asarray(g_obs, dtype=np.float64).reshape(-1)
    W = np.asarray(W, dtype=np.float64)
    n, m = labels.shape[0], spec.input_dim
    if init is None:
        x = np.random.default_rng(cfg.init_seed).standard_normal((n, m))
    else:
        x = np.array(init, dtype=np.float64).reshape(n, m)
    if cfg.boxed:
        x = np.clip(x, 0.0, 1.0)
    truth = None if true_inputs is None else np.atleast_2d(true_inputs)

    if spec.kind == SOFTMAX_REGRESSION:
        Wm = spec.unflatten(W)[0]
        G = g_obs.reshape(Wm.shape)

        def value_and_grad(z):
            return _linear_objective(z, Wm, labels, G, cfg.tv_coefficient)
    else:
        def value_and_grad(z):
            return _fd_objective(spec, W, labels, g_obs, cfg.tv_coefficient, z, cfg.fd_step)

    state = AdamState.zeros(n * m)
    objective = np.empty(cfg.iterations)
    distances = np.empty(cfg.iterations if truth is not None else 0)
    estimates, steps = [], []
    for i in range(cfg.iterations):
        value, grad = value_and_grad(x)
        objective[i] = value
        state, step = adam_step(state, grad.ravel(), cfg.lr_at(i))
        x = x + step.reshape(n, m)
        if cfg.boxed:
            x = np.clip(x, 0.0, 1.0)
        if truth is not None:
            distances[i] = np.linalg.norm(x - truth, axis=1).mean()
        if (i + 1) % cfg.keep_every == 0 or i + 1 == cfg.iterations:
            estimates.append(x.copy())
            steps.append(i + 1)
    return AttackResult(estimates, steps, distances, x, objective)


def closed_form_recover_linear(g_obs, W, label, rank_ratio: float = 1e3,
                               tol: float = 1e-6) -> np.ndarray:
    """Exact single-datum recovery for softmax regression without bias.

    The gradient ``(p - y) x^T`` is rank one, so ``x`` is a multiple ``s v`` of
    the leading right singular vector. The true-class row fixes ``s`` through a
    one-dimensional root search; the remaining rows are then checked for
    consistency.
    """
    y = np.asarray(label, dtype=np.float64).reshape(-1)
    W = np.asarray(W, dtype=np.float64).reshape(y.size, -1)
    G = np.asarray(g_obs, dtype=np.float64).reshape(W.shape)
    c = int(y.argmax())
    U, S, Vt = np.linalg.svd(G)
    if S[0] == 0.0 or (S.size > 1 and S[1] * rank_ratio > S[0]):
        raise NotRecoverable("observed gradient is not numerically rank one")
    u, v = U[:, 0] * S[0], Vt[0]

    def residual_c(s):
        return s * (softmax(s * (W @ v))[c] - 1.0) - u[c]

    # s * (p_c - 1) = u_c with p_c - 1 in (-1, 0): s has the sign of -u_c and |s| > |u_c|
    sign = -np.sign(u[c]) if u[c] != 0 else 1.0
    lo = abs(u[c]) * (1 + 1e-12)
    grid = sign * np.geomspace(max(lo, 1e-12), max(lo, 1e-12) * 1e8, 4000)
    vals = np.array([residual_c(s) for s in grid])
    candidates = []
    for i in np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) <= 0)[0]:
        s = brentq(residual_c, grid[i], grid[i + 1], xtol=1e-15, rtol=1e-15, maxiter=500)
        x = s * v
        a = softmax(W @ x) - y
        rel = np.linalg.norm(np.outer(a, x) - G) / np.linalg.norm(G)
        candidates.append((rel, x))
    if not candidates:
        raise NotRecoverable("no input scale reproduces the true-class gradient row")
    rel, x = min(candidates, key=lambda r: r[0])
    if rel > tol:
        raise NotRecoverable(f"inconsistent gradient scale (relative residual {rel:.3g})")
    return x


def empirical_leakage(result: AttackResult, D: float) -> float:
    """1 - mean clamped distance / D over the attack iterates; 0 when there were none."""
    if not D > 0:
        raise ParameterError("D must be positive")
    d = np.asarray(result.distances if isinstance(result, AttackResult) else result, dtype=np.float64)
    if d.size == 0:
        return 0.0
    d = np.clip(d, 0.0, D)
    return float((D - d.mean()) / D)


def psnr(a, b, dynamic_range: float = 1.0) -> float:
    err = mse(a, b)
    return float("inf") if err == 0 else float(10 * np.log10(dynamic_range ** 2 / err))


def recovery_frequency(models: Sequence[np.ndarray], client_batch: Batch, threshold: float,
                       spec: ModelSpec, cfg: AttackConfig, eta: float = 0.1,
                       attempts: int = 5, similarity: str = "ssim") -> np.ndarray:
    """Per-model, per-datum recovery frequency ``M_d / (S * attempts)``.

    For model ``W_m`` the batch gradient is computed at ``W_m`` and the attack
    runs against the post-step model ``W_m - eta * grad`` with that gradient,
    once per attempt with a different initialization seed.
    Returns an array of shape (len(models), S).
    """
    S = len(client_batch)
    if S < 1:
        raise ParameterError("empty batch")
    if attempts < 1:
        raise ParameterError("attempts must be >= 1")
    if similarity not in ("ssim", "psnr"):
        raise ParameterError("similarity must be 'ssim' or 'psnr'")
    score = ssim if similarity == "ssim" else psnr
    out = np.zeros((len(models), S))
    for j, W in enumerate(models):
        grad = numkit.backward(spec, W, client_batch)
        W_next = W - eta * grad
        counts = np.zeros(S)
        for r in range(attempts):
            run_cfg = AttackConfig(**{**cfg.__dict__, "init_seed": cfg.init_seed + r})
            res = invert_gradient(grad, W_next, client_batch.labels, spec, run_cfg)
            for d in range(S):
                counts[d] += score(res.final[d], client_batch.inputs[d]) > threshold
        out[j] = counts / (S * attempts)
    return out


def prepare_models(dataset: Batch, spec: ModelSpec, R: int, M: int, eta: float,
                   seed: int, batch_size: int = 4) -> list[np.ndarray]:
    """M random initializations, each trained R mini-batch SGD steps."""
    if R < 0 or M < 1:
        raise ParameterError("need R >= 0 and M >= 1")
    models = []
    for j in range(M):
        rng = np.random.default_rng([seed, j])
        W = spec.init_params(rng)
        for _ in range(R):
            idx = rng.choice(len(dataset), size=min(batch_size, len(dataset)), replace=False)
            W = W - eta * numkit.backward(spec, W, dataset.subset(np.sort(idx)))
        models.append(W)
    return models


def bayesian_constants(kappa1, kappa2: float, kappa3) -> tuple[float, float]:
    """Return (C1, C2) from posterior estimates ``kappa1``, prior ``kappa2`` and max posterior ``kappa3``.

    C1 is the dataset average of the symmetrized log-ratio terms; C2 is
    ``(exp(2 xi) - 1) / 2`` with ``xi`` the largest absolute log ratio
    ``|log(kappa3 / kappa2)|`` over the data.
    """
    k1 = np.atleast_1d(np.asarray(kappa1, dtype=np.float64))
    k3 = np.atleast_1d(np.asarray(kappa3, dtype=np.float64))
    if np.any(k1 <= 0) or np.any(k3 <= 0) or not kappa2 > 0:
        raise ParameterError("kappa values must be positive")
    if np.any(k1 > 1) or np.any(k3 > 1) or kappa2 > 1:
        raise ParameterError("kappa values must not exceed 1")
    mid = 0.5 * (k1 + kappa2)
    c1 = float(np.mean(k1 * np.log(k1 / mid)) + np.mean(kappa2 * np.log(kappa2 / mid)))
    xi = float(np.max(np.abs(np.log(k3 / kappa2))))
    return c1, 0.5 * (np.exp(2.0 * xi) - 1.0)


def attack_snapshot(snapshot, spec: ModelSpec, cfg: AttackConfig) -> AttackResult:
    """Run the attack against one recorded client upload, tracking distance to the true batch."""
    g = observed_gradient_from_update(snapshot.W_prev, snapshot.W_client, snapshot.eta)
    return invert_gradient(g, snapshot.W_prev, snapshot.batch.labels, spec, cfg,
                           true_inputs=snapshot.batch.inputs)


def reconstruction_scores(result: AttackResult, truth: np.ndarray) -> tuple[float, float]:
    """Mean per-datum MSE and SSIM of the final reconstruction."""
    truth = np.atleast_2d(truth)
    errs = [mse(a, b) for a, b in zip(result.final, truth)]
    sims = [ssim(a, b) for a, b in zip(result.final, truth)]
    return float(np.mean(errs)), float(np.mean(sims))
