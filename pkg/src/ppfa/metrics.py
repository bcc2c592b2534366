"""Accuracy, MSE, global SSIM and the Calibrated Averaged Performance score."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .numkit import ParameterError, ShapeError


@dataclass(frozen=True)
class SweepPoint:
    budget: float
    accuracy: float
    rerr: float
    empirical_leakage: float = float("nan")
    mse: float = float("nan")
    ssim: float = float("nan")


def accuracy(predictions, labels) -> float:
    predictions, labels = np.asarray(predictions), np.asarray(labels)
    if predictions.size == 0 or predictions.shape != labels.shape:
        raise ParameterError("accuracy needs equal-length, non-empty inputs")
    return float(np.mean(predictions == labels))


def mse(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shapes {a.shape} and {b.shape} differ")
    return float(np.mean((a - b) ** 2))


def ssim(a, b, dynamic_range: float = 1.0) -> float:
    """Single-window SSIM over the whole vector."""
    if not dynamic_range > 0:
        raise ParameterError("dynamic range must be positive")
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape or a.size < 2:
        raise ShapeError("ssim needs two equal-length vectors with at least 2 entries")
    if np.array_equal(a, b):
        return 1.0
    c1 = (0.01 * dynamic_range) ** 2
    c2 = (0.03 * dynamic_range) ** 2
    mu_a, mu_b = a.mean(), b.mean()
    var_a, var_b = a.var(), b.var()
    cov = np.mean((a - mu_a) * (b - mu_b))
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(num / den)


def cap(points: Sequence[SweepPoint]) -> float:
    """Mean over budget levels of accuracy times recovery error."""
    if not points:
        raise ParameterError("CAP needs at least one sweep point")
    return float(np.mean([p.accuracy * p.rerr for p in points]))
