"""Numerical checks of the convergence and near-optimality guarantees, with independent oracles.

Nothing here re-derives a proof. Each check evaluates both sides of an
inequality on concrete instances and reports the slack:

* contraction of projected gradient steps on ball-constrained quadratics,
  against an exact trust-region minimizer;
* the per-round utility-loss gap of the learned distortion versus a
  brute-force optimal distortion on a quadratic federation;
* the averaged squared-gradient bound on full training runs;
* the inner-product decomposition used in the convergence argument.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from .. import distortion as dist
from ..federation import (ClientState, FederationConfig, ModelTask, Trajectory, global_grad,
                          run_round, server_aggregate)
from ..numkit import ParameterError, ShapeError
from ..privacy import PL, PrivacyBudget, PrivacyConstants, ShellBounds

REPORT_COLUMNS = ("check", "instance", "lhs", "rhs", "passed")


class PreconditionError(ValueError):
    """A check was given incomplete inputs (e.g. missing oracle values)."""


@dataclass
class Report:
    rows: list[dict] = field(default_factory=list)

    def add(self, check: str, instance: str, lhs: float, rhs: float) -> bool:
        ok = bool(lhs <= rhs)
        self.rows.append({"check": check, "instance": instance, "lhs": float(lhs),
                          "rhs": float(rhs), "passed": ok})
        return ok

    @property
    def passed(self) -> bool:
        return all(r["passed"] for r in self.rows)

    def failures(self) -> list[dict]:
        return [r for r in self.rows if not r["passed"]]

    def extend(self, other: "Report") -> "Report":
        self.rows.extend(other.rows)
        return self


# ---------------------------------------------------------------- smoothness probe

@dataclass(frozen=True)
class SmoothnessProbe:
    L: float
    R: float
    Gamma: float
    C_g: float
    empirical: bool = True


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def probe_smoothness(grad_fn: Callable[[np.ndarray], np.ndarray], centers, region_samples: int = 200,
                     radius: float = 0.5, Gamma: float = 0.0, seed: int = 0,
                     power_iters: int = 30, fd_step: float = 1e-4) -> SmoothnessProbe:
    """Empirical L, R and C_g of ``grad_fn`` around ``centers`` (one point or a stack of points).

    L is the largest gradient-difference ratio over random pairs, raised to the
    top Hessian eigenvalue found by power iteration on finite-difference
    Hessian-vector products. R is the smallest curvature seen along pair
    directions and along the bottom eigenvector, clamped to [0, L].
    """
    if region_samples < 100:
        raise ParameterError("region_samples must be >= 100")
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    rng = np.random.default_rng(seed)
    n, dim = centers.shape
    L, curv_min, c_g = 0.0, math.inf, 0.0
    for i in range(region_samples):
        c = centers[i % n]
        w1 = c + radius * rng.uniform() * _unit(rng.standard_normal(dim))
        w2 = c + radius * rng.uniform() * _unit(rng.standard_normal(dim))
        g1, g2 = grad_fn(w1), grad_fn(w2)
        d = w1 - w2
        dd = float(d @ d)
        if dd == 0:
            continue
        L = max(L, float(np.linalg.norm(g1 - g2)) / math.sqrt(dd))
        curv_min = min(curv_min, float((g1 - g2) @ d) / dd)
        c_g = max(c_g, float(np.linalg.norm(g1)), float(np.linalg.norm(g2)))

    def hvp(w, v):
        return (grad_fn(w + fd_step * v) - grad_fn(w - fd_step * v)) / (2 * fd_step)

    for c in centers[np.linspace(0, n - 1, min(n, 5)).astype(int)]:
        c_g = max(c_g, float(np.linalg.norm(grad_fn(c))))
        v = _unit(rng.standard_normal(dim))
        top = 0.0
        for _ in range(power_iters):
            hv = hvp(c, v)
            top = float(np.linalg.norm(hv))
            if top == 0:
                break
            v = hv / top
        L = max(L, top)
        # smallest eigenvalue via power iteration on (top * I - H)
        v = _unit(rng.standard_normal(dim))
        shifted = 0.0
        for _ in range(power_iters):
            sv = top * v - hvp(c, v)
            shifted = float(np.linalg.norm(sv))
            if shifted == 0:
                break
            v = sv / shifted
        curv_min = min(curv_min, float(v @ hvp(c, v)))
    R = min(max(0.0, curv_min if math.isfinite(curv_min) else 0.0), L)
    return SmoothnessProbe(L=L, R=R, Gamma=Gamma, C_g=c_g)


# ---------------------------------------------------------------- oracles

def _to_shell(v: np.ndarray, l: float, u: float, rng: np.random.Generator) -> np.ndarray:
    # independent re-implementation of the radial projection, used only by the oracle
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    zero = n == 0
    if np.any(zero):
        v = np.where(zero, _unit(rng.standard_normal(v.shape[-1])), v)
        n = np.where(zero, 1.0, n)
    return v * (np.clip(n, l, u) / n)


def direction_pool(dim: int, samples: int, rng) -> np.ndarray:
    """``samples`` uniform unit directions in ``R^dim``."""
    dirs = np.random.default_rng(rng).standard_normal((samples, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return dirs


def brute_force_optimal_distortion(loss_fn: Callable[[np.ndarray], np.ndarray], W, bounds: ShellBounds,
                                   samples: int = 10_000, refine_steps: int = 30, seed: int = 0,
                                   fd_step: float = 1e-6, chunk: int = 16384,
                                   directions: np.ndarray | None = None) -> tuple[np.ndarray, float]:
    """Approximate ``argmin_{l <= ||d|| <= u} loss_fn(W + d)``.

    ``loss_fn`` maps a stack of parameter rows to their losses. Random
    directions with uniform radii are scored first; the best candidate is then
    polished by shell-projected, backtracking finite-difference descent.
    ``directions`` optionally supplies a reusable pool of unit rows (see
    :func:`direction_pool`); radii are always drawn fresh.
    """
    if samples < 10_000:
        raise ParameterError("brute-force search needs at least 1e4 samples")
    W = np.asarray(W, dtype=np.float64)
    dim = W.size
    if bounds.degenerate:
        return np.zeros(dim), float(loss_fn(W[None, :])[0])
    if directions is not None and directions.shape != (samples, dim):
        raise ShapeError(f"direction pool {directions.shape} does not match ({samples}, {dim})")
    rng = np.random.default_rng(seed)
    best, best_val = None, math.inf
    for start in range(0, samples, chunk):
        k = min(chunk, samples - start)
        if directions is None:
            dirs = direction_pool(dim, k, rng)
        else:
            dirs = directions[start:start + k]
        cand = dirs * rng.uniform(bounds.l, bounds.u, size=(k, 1))
        vals = loss_fn(W + cand)
        i = int(np.argmin(vals))
        if vals[i] < best_val:
            best, best_val = cand[i].copy(), float(vals[i])

    eye = np.eye(dim) * fd_step
    step = 0.25 * bounds.u
    for _ in range(refine_steps):
        # forward differences: only a descent direction is needed, and f(best) is known
        g = (loss_fn(W + best + eye) - best_val) / fd_step
        gn = np.linalg.norm(g)
        if gn == 0:
            break
        while step > 1e-12 * bounds.u:
            cand = _to_shell(best - step * g / gn, bounds.l, bounds.u, rng)
            val = float(loss_fn((W + cand)[None, :])[0])
            if val < best_val:
                best, best_val = cand, val
                step *= 1.5
                break
            step *= 0.5
        else:
            break
    return best, best_val


def ball_minimizer(A: np.ndarray, d: np.ndarray, radius: float) -> np.ndarray:
    """Exact minimizer of ``0.5 (x - d)^T A (x - d)`` over ``||x|| <= radius`` for SPD ``A``.

    Solves the trust-region secular equation ``||(A + mu I)^-1 A d|| = radius``.
    """
    if np.linalg.norm(d) <= radius:
        return d.copy()
    lam, Q = np.linalg.eigh(A)
    b = Q.T @ (A @ d)

    def excess(mu):
        return float(np.linalg.norm(b / (lam + mu))) - radius

    hi = 1.0
    while excess(hi) > 0:
        hi *= 2.0
    mu = brentq(excess, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    return Q @ (b / (lam + mu))


def random_spd(dim: int, low: float, high: float, rng: np.random.Generator) -> np.ndarray:
    """Random SPD matrix whose spectrum spans exactly [low, high]."""
    Q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    eig = rng.uniform(low, high, size=dim)
    eig[0], eig[-1] = low, high
    return (Q * eig) @ Q.T


# ---------------------------------------------------------------- contraction

def verify_contraction(instances: int = 20, dim: int = 5, eig_low: float = 1.0, eig_high: float = 4.0,
                       steps: int = 15, radius: float = 1.0, seed: int = 0,
                       slack: float = 1e-9) -> Report:
    """Per-step and cumulative contraction of the learner (plain GD, step 1/L) on ball-constrained quadratics."""
    rng = np.random.default_rng(seed)
    report = Report()
    for i in range(instances):
        A = random_spd(dim, eig_low, eig_high, rng)
        lam = np.linalg.eigvalsh(A)
        R, L = float(lam[0]), float(lam[-1])
        d = _unit(rng.standard_normal(dim)) * rng.uniform(1.5, 4.0) * radius
        star = ball_minimizer(A, d, radius)
        cfg = dist.LearnerConfig(M=steps, gamma=1.0 / L, lambda_norm=0.0, optimizer=dist.PLAIN_GD)
        trace: list[np.ndarray] = []
        dist.learn_distortion(lambda delta: A @ (delta - d), np.zeros(dim), ShellBounds(0.0, radius), cfg,
                              trace=trace)
        errs = [float(np.sum((x - star) ** 2)) for x in trace]
        worst = -math.inf
        for m in range(len(errs) - 1):
            if errs[m] > 1e-24:
                worst = max(worst, errs[m + 1] / errs[m])
        if worst > -math.inf:
            report.add("contraction-step", f"quadratic {i}", worst, 1.0 - R / L + slack)
        cum = max(errs[m + 1] - (1.0 - R / L) ** m * errs[0] for m in range(len(errs) - 1))
        report.add("contraction-cumulative", f"quadratic {i}", cum, slack)
    return report


# ---------------------------------------------------------------- quadratic federation

@dataclass(frozen=True)
class Quadratic:
    A: np.ndarray
    c: np.ndarray


@dataclass(frozen=True)
class QuadraticTask:
    """Client losses ``0.5 (W - c_k)^T A_k (W - c_k)``; sampling returns the client itself."""

    dim: int

    @property
    def num_params(self) -> int:
        return self.dim

    def loss(self, params, q: Quadratic) -> float:
        r = np.asarray(params) - q.c
        return float(0.5 * r @ q.A @ r)

    def grad(self, params, q: Quadratic) -> np.ndarray:
        return q.A @ (np.asarray(params) - q.c)

    def batched_loss(self, rows, q: Quadratic) -> np.ndarray:
        r = np.atleast_2d(rows) - q.c
        return 0.5 * np.einsum("ni,ij,nj->n", r, q.A, r)

    def sample(self, q, size, rng):
        return q


@dataclass(frozen=True)
class QuadraticSuite:
    clients: int = 4
    rounds: int = 10
    dim: int = 3
    eig_low: float = 1.0
    eig_high: float = 2.0
    Gamma: float = 2.0
    center_spread: float = 0.05
    start_distance: float = 3.0
    eta: float = 0.1
    samples: int = 100_000
    refine_steps: int = 60
    slack: float = 1e-3
    seed: int = 0


def learner_steps_for(L: float, R: float, T: int, Gamma: float) -> int:
    """Smallest M with M >= (L/R) log(2 T Gamma^2)."""
    return math.ceil((L / R) * math.log(2 * T * Gamma ** 2))


def _pl_budget_for_shell(l: float, c: PrivacyConstants) -> PrivacyBudget:
    return PrivacyBudget(c.a1 - c.a2 * l, PL)


def verify_theorem1(suite: QuadraticSuite = QuadraticSuite()) -> Report:
    """Per-round utility-loss gap between learned and brute-force optimal distortions."""
    rng = np.random.default_rng(suite.seed)
    center = rng.standard_normal(suite.dim)
    quads = []
    for _ in range(suite.clients):
        quads.append(Quadratic(random_spd(suite.dim, suite.eig_low, suite.eig_high, rng),
                               center + suite.center_spread * rng.standard_normal(suite.dim)))
    L = max(float(np.linalg.eigvalsh(q.A)[-1]) for q in quads)
    R = min(float(np.linalg.eigvalsh(q.A)[0]) for q in quads)
    M = learner_steps_for(L, R, suite.rounds, suite.Gamma)

    constants = PrivacyConstants()
    budget = _pl_budget_for_shell(suite.Gamma / 2.0, constants)
    clients = [ClientState(k, q, 1, (budget,)) for k, q in enumerate(quads)]
    task = QuadraticTask(suite.dim)
    cfg = FederationConfig(
        rounds=suite.rounds, eta=suite.eta, batch_size=1, mechanism=dist.PL_LEARN,
        constants=constants, seed=suite.seed, keep_locals=True,
        learner=dist.LearnerConfig(M=M, gamma=1.0 / L, lambda_norm=0.0, optimizer=dist.PLAIN_GD),
    )
    W = center + suite.start_distance * _unit(rng.standard_normal(suite.dim))
    C = max(probe_smoothness(lambda w, q=q: task.grad(w, q), W, 100, radius=suite.Gamma,
                             seed=suite.seed).L for q in quads)
    threshold = C / (2 * suite.rounds ** 2) + suite.slack
    report = Report()
    weights = [c.n_k for c in clients]
    for t in range(1, suite.rounds + 1):
        W, _, rec, _ = run_round(task, clients, W, t, cfg)
        optimal = []
        for k, (q, local, shell) in enumerate(zip(quads, rec.locals, rec.shells)):
            delta, _ = brute_force_optimal_distortion(lambda rows, q=q: task.batched_loss(rows, q), local, shell,
                                                      suite.samples, suite.refine_steps, seed=1000 * t + k)
            optimal.append(local + delta)
        W_star = server_aggregate(optimal, weights)
        for k, q in enumerate(quads):
            gap = task.loss(W, q) - task.loss(W_star, q)
            report.add("theorem1-gap", f"round {t} client {k}", gap, threshold)
    return report


# ---------------------------------------------------------------- convergence bound

def oracle_distortion_norms(task, clients: Sequence[ClientState], trajectory: Trajectory,
                            samples: int = 10_000, refine_steps: int = 30, seed: int = 0) -> np.ndarray:
    """Norm of the aggregated brute-force optimal distortion, per round."""
    weights = [c.n_k for c in clients]
    dim = trajectory.records[0].locals[0].size if trajectory.records and trajectory.records[0].locals else 0
    # one direction pool per client; radii and refinement stay per round
    pools = [direction_pool(dim, samples, np.random.default_rng([seed, c.id])) for c in clients]
    norms = []
    for rec in trajectory.records:
        if rec.locals is None or rec.shells is None:
            raise PreconditionError("trajectory was recorded without locals/shells (keep_locals=False)")
        deltas = []
        for c, local, shell in zip(clients, rec.locals, rec.shells):
            d, _ = brute_force_optimal_distortion(lambda rows, data=c.data: task.batched_loss(rows, data),
                                                  local, shell, samples, refine_steps,
                                                  seed=seed + 7919 * rec.t + c.id,
                                                  directions=pools[c.id])
            deltas.append(d)
        norms.append(float(np.linalg.norm(server_aggregate(deltas, weights))))
    return np.array(norms)


@dataclass(frozen=True)
class Theorem2Terms:
    lhs: float
    rhs: float
    descent: float
    C_g: float
    L: float


def theorem2_terms(trajectory: Trajectory, probe: SmoothnessProbe, eta: float,
                   oracle_norms: Sequence[float] | None) -> Theorem2Terms:
    if oracle_norms is None:
        raise PreconditionError("missing optimal-distortion oracle values")
    recs = trajectory.records
    T = len(recs)
    if len(oracle_norms) != T:
        raise PreconditionError(f"need {T} oracle values, got {len(oracle_norms)}")
    observed = max(max(math.sqrt(r.grad_norm_sq) for r in recs),
                   max(c.grad_norm for r in recs for c in r.clients))
    C_g = max(probe.C_g, observed)
    L = probe.L
    sq = np.array([r.grad_norm_sq for r in recs])
    lhs = float(np.mean(eta / 2.0 * sq))
    descent = (recs[0].global_loss_prev - trajectory.global_loss_final) / T
    per_round = eta * C_g ** 2 + eta ** 2 * L * C_g ** 2 + L * np.asarray(oracle_norms) ** 2 + 2 * L / T ** 2
    return Theorem2Terms(lhs, float(descent + np.mean(per_round)), float(descent), C_g, L)


def verify_theorem2(trajectory: Trajectory, probe: SmoothnessProbe, eta: float,
                    oracle_norms: Sequence[float] | None, label: str = "run") -> Report:
    terms = theorem2_terms(trajectory, probe, eta, oracle_norms)
    report = Report()
    report.add("theorem2", label, terms.lhs, terms.rhs)
    return report


def probe_run(task: ModelTask, clients: Sequence[ClientState], trajectory: Trajectory,
              region_samples: int = 200, radius: float = 0.5, seed: int = 0) -> SmoothnessProbe:
    """Probe the global training loss around the iterates visited by a run."""
    centers = np.stack([loc for r in trajectory.records for loc in (r.locals or ())] or [trajectory.W_final])
    gamma = max((s.u for r in trajectory.records for s in (r.shells or ())), default=0.0)
    return probe_smoothness(lambda w: global_grad(task, w, clients), centers, region_samples, radius,
                            Gamma=gamma, seed=seed)


# ---------------------------------------------------------------- inner-product identity

def inner_product_identity_residual(a: np.ndarray, bs: Sequence[np.ndarray], weights: Sequence[float]) -> float:
    """|<a, sum w_k b_k> - (|a|^2/2 + sum w_k |b_k|^2/2 - sum w_k |a - b_k|^2/2)| with normalized weights."""
    w = np.asarray(weights, dtype=np.float64)
    w = w / w.sum()
    bs = np.asarray(bs, dtype=np.float64)
    left = float(a @ (w @ bs))
    right = 0.5 * float(a @ a) + 0.5 * float(w @ np.sum(bs * bs, axis=1)) \
        - 0.5 * float(w @ np.sum((a - bs) ** 2, axis=1))
    return abs(left - right)


def verify_inner_product_identity(instances: int = 1000, seed: int = 0, tol: float = 1e-9,
                                  live: Sequence[tuple[np.ndarray, Sequence[np.ndarray], Sequence[float]]] = ()) -> Report:
    rng = np.random.default_rng(seed)
    report = Report()
    worst = 0.0
    for _ in range(instances):
        dim, K = int(rng.integers(1, 40)), int(rng.integers(1, 9))
        a = rng.standard_normal(dim)
        bs = rng.standard_normal((K, dim))
        w = rng.integers(1, 200, size=K)
        worst = max(worst, inner_product_identity_residual(a, bs, w))
    report.add("inner-product-identity", f"{instances} random instances", worst, tol)
    for i, (a, bs, w) in enumerate(live):
        report.add("inner-product-identity", f"live round {i + 1}", inner_product_identity_residual(a, bs, w), tol)
    return report


def live_identity_instances(task, clients: Sequence[ClientState], trajectory: Trajectory) -> list:
    """(grad at the undistorted aggregate, grads at client locals, weights) for every recorded round."""
    out = []
    weights = [c.n_k for c in clients]
    for rec in trajectory.records:
        if rec.locals is None:
            raise PreconditionError("trajectory was recorded without locals")
        bs = [global_grad(task, loc, clients) for loc in rec.locals]
        a = global_grad(task, server_aggregate(list(rec.locals), weights), clients)
        out.append((a, bs, weights))
    return out


# ---------------------------------------------------------------- end-to-end runs

def check_run(cfg, variant: str | None, budget: float | None, seed: int):
    """Train one configured run with locals recorded, then evaluate the convergence bound on it.

    Returns the report and the live inner-product instances of the run.
    """
    from .experiment import run_experiment

    res = run_experiment(cfg, variant, budget, seed, keep_locals=True, attack=False)
    task = ModelTask(cfg.model)
    th = cfg.theory
    probe = probe_run(task, res.clients, res.trajectory, th.region_samples, th.probe_radius, seed)
    if variant is None:
        norms = np.zeros(len(res.trajectory.records))
    else:
        norms = oracle_distortion_norms(task, res.clients, res.trajectory, th.brute_samples,
                                        th.refine_steps, seed)
    label = f"{variant or 'none'} budget={budget} seed={seed}"
    report = verify_theorem2(res.trajectory, probe, cfg.eta, norms, label)
    return report, live_identity_instances(task, res.clients, res.trajectory)
