"""Protection mechanisms: norm-shell projection, the distortion learner and static baselines."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import privacy
from .numkit import AdamState, NumericError, ParameterError, ShapeError, adam_step, stable_norm
from .privacy import DpParams, PrivacyBudget, PrivacyConstants, ShellBounds

PL_LEARN = "PL-Learn"
PL_IDENTICAL = "PL-Identical"
DP_LEARN = "DP-Learn"
DP_IDENTICAL = "DP-Identical"
VARIANTS = (PL_LEARN, PL_IDENTICAL, DP_LEARN, DP_IDENTICAL)

PLAIN_GD = "plain-gd"
ADAM = "adaptive-moment"


class ConfigError(ValueError):
    """Inconsistent mechanism configuration."""


def framework_of(variant: str) -> str:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown mechanism {variant!r}")
    return variant.split("-")[0]


def is_learned(variant: str) -> bool:
    return variant.endswith("Learn")


@dataclass(frozen=True)
class LearnerConfig:
    M: int = 10
    gamma: float = 0.1
    lambda_norm: float = 0.01
    optimizer: str = ADAM
    fallback_dir_seed: int = 0

    def __post_init__(self):
        if self.M < 1:
            raise ParameterError("M must be >= 1")
        if not self.gamma > 0:
            raise ParameterError("gamma must be positive")
        if self.lambda_norm < 0:
            raise ParameterError("lambda_norm must be >= 0")
        if self.optimizer not in (PLAIN_GD, ADAM):
            raise ParameterError(f"unknown optimizer {self.optimizer!r}")


def fallback_direction(dim: int, seed: int) -> np.ndarray:
    """Deterministic unit vector used when a zero vector has to be projected outward."""
    v = np.random.default_rng([seed, dim]).standard_normal(dim)
    return v / np.linalg.norm(v)


def project_shell(v: np.ndarray, b: ShellBounds, fallback_dir: np.ndarray) -> np.ndarray:
    """Closest point of {l <= ||x|| <= u} to ``v`` (radial scaling)."""
    v = np.asarray(v, dtype=np.float64)
    fallback_dir = np.asarray(fallback_dir, dtype=np.float64)
    if v.shape != fallback_dir.shape:
        raise ShapeError(f"vector {v.shape} and fallback {fallback_dir.shape} differ")
    norm = stable_norm(v)
    if b.l <= norm <= b.u:
        return v
    if norm == 0.0:
        out = b.l * fallback_dir
    else:
        # unit direction via a max-abs rescale so tiny or huge inputs cannot under/overflow
        w = v / np.max(np.abs(v))
        out = (b.u if norm > b.u else b.l) * (w / np.linalg.norm(w))
    # keep the result inside the shell despite rounding so projection is idempotent
    while stable_norm(out) > b.u:
        out = np.nextafter(out, 0.0)
    while stable_norm(out) < b.l:
        out = np.where(out != 0.0, np.nextafter(out, np.copysign(np.inf, out)), out)
    return out


def learn_distortion(
    grad_at: Callable[[np.ndarray], np.ndarray],
    W: np.ndarray,
    b: ShellBounds,
    cfg: LearnerConfig,
    init: np.ndarray | None = None,
    trace: list | None = None,
) -> np.ndarray:
    """Projected descent of ``L(W + delta) - lambda_norm * ||delta||`` over the shell.

    ``grad_at(delta)`` must return the gradient of ``L(W + delta)`` in ``delta``.
    When ``trace`` is a list, every iterate (starting with the initial one) is
    appended to it.
    """
    dim = np.asarray(W).size
    if b.degenerate:
        return np.zeros(dim)
    delta = np.zeros(dim) if init is None else np.array(init, dtype=np.float64)
    if delta.shape != (dim,):
        raise ShapeError("initial distortion does not match W")
    fallback = fallback_direction(dim, cfg.fallback_dir_seed)
    state = AdamState.zeros(dim)
    if trace is not None:
        trace.append(delta.copy())
    for _ in range(cfg.M):
        g = np.asarray(grad_at(delta), dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient in distortion learner")
        norm = np.linalg.norm(delta)
        if cfg.lambda_norm and norm > 0:
            g = g - cfg.lambda_norm * delta / norm
        if cfg.optimizer == PLAIN_GD:
            delta = delta - cfg.gamma * g
        else:
            state, step = adam_step(state, g, cfg.gamma)
            delta = delta + step
        delta = project_shell(delta, b, fallback)
        if trace is not None:
            trace.append(delta.copy())
    return delta


def identical_pl(b: ShellBounds, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Random signs with equal magnitude per coordinate and total norm ``b.l``."""
    if dim < 1:
        raise ParameterError("dim must be >= 1")
    signs = np.where(rng.random(dim) < 0.5, -1.0, 1.0)
    return signs * (b.l / math.sqrt(dim))


def identical_dp(scale_b: float, dim: int, rng: np.random.Generator) -> np.ndarray:
    """iid Laplace(0, scale_b) coordinates by inverse-CDF sampling."""
    if not scale_b > 0:
        raise ParameterError("Laplace scale must be positive")
    u = rng.random(dim) - 0.5
    return -scale_b * np.sign(u) * np.log1p(-2.0 * np.abs(u))


def make_distortion(
    kind: str,
    grad_at: Callable[[np.ndarray], np.ndarray],
    W: np.ndarray,
    budget: PrivacyBudget,
    constants: PrivacyConstants,
    cfg: LearnerConfig,
    rng: np.random.Generator,
    dp: DpParams | None = None,
) -> tuple[np.ndarray, ShellBounds]:
    """Build the distortion for one client/round. Returns ``(delta, shell)``."""
    if framework_of(kind) != budget.framework:
        raise ConfigError(f"mechanism {kind} used with a {budget.framework} budget")
    dim = np.asarray(W).size
    if budget.framework == privacy.DP:
        dp = DpParams(dp.eta, dp.sensitivity, dim) if dp is not None else DpParams(dim=dim)
    shell = privacy.shell_bounds(budget, constants, dp)
    if kind == PL_IDENTICAL:
        return identical_pl(shell, dim, rng), shell
    if kind == DP_IDENTICAL:
        return identical_dp(privacy.laplace_scale(budget.chi, dp), dim, rng), shell
    init = None
    if kind == DP_LEARN:
        init = identical_dp(privacy.laplace_scale(budget.chi, dp), dim, rng)
    return learn_distortion(grad_at, W, shell, cfg, init=init), shell
