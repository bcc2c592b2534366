"""Privacy-leakage measures, budget inversion and norm-shell bounds.

Two frameworks are supported:

* ``PL`` -- leakage as a decreasing affine function of the distortion norm,
  ``1 - (c_a * Delta + c_a * c_0 * I**(p-1)) / (2D)``, clamped to [0, 1].
* ``DP`` -- Laplace mechanism with leakage ``eta * S * sigma`` where ``sigma``
  is the inverse noise scale.

Inverting a budget gives the minimum protection hyperparameter, from which the
shell ``l <= ||delta|| <= u`` with ``u = 2l`` is derived.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .numkit import ParameterError

PL = "PL"
DP = "DP"


@dataclass(frozen=True)
class PrivacyConstants:
    c_a: float = 1.0
    c_b: float = 1.0
    c_0: float = 1.0
    c_2: float = 1.0
    p: float = 0.5
    D: float = 1.0
    attack_rounds: int = 1600

    def __post_init__(self):
        for name in ("c_a", "c_b", "c_0", "c_2", "D"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive")
        if not 0 < self.p < 1:
            raise ParameterError("p must lie in (0, 1)")
        if self.attack_rounds < 0:
            raise ParameterError("attack_rounds must be >= 0")

    @property
    def attack_term(self) -> float:
        """c_a * c_0 * I**(p-1), the attack-regret contribution."""
        return self.c_a * self.c_0 * self.attack_rounds ** (self.p - 1.0)

    @property
    def a1(self) -> float:
        return 1.0 - self.attack_term / (2.0 * self.D)

    @property
    def a2(self) -> float:
        return self.c_a / (2.0 * self.D)


@dataclass(frozen=True)
class DpParams:
    eta: float = 0.1
    sensitivity: float = 500.0
    dim: int = 1

    def __post_init__(self):
        if not (self.eta > 0 and self.sensitivity > 0):
            raise ParameterError("eta and sensitivity must be positive")
        if self.dim < 1:
            raise ParameterError("dim must be >= 1")


@dataclass(frozen=True)
class ShellBounds:
    l: float
    u: float

    def __post_init__(self):
        if not (0 <= self.l <= self.u) or not math.isfinite(self.u):
            raise ParameterError(f"invalid shell bounds l={self.l}, u={self.u}")

    @property
    def degenerate(self) -> bool:
        return self.u <= 0


@dataclass(frozen=True)
class PrivacyBudget:
    chi: float
    framework: str

    def __post_init__(self):
        if self.framework == PL:
            if not 0 <= self.chi <= 1:
                raise ParameterError(f"PL budget must lie in [0, 1], got {self.chi}")
        elif self.framework == DP:
            if not self.chi > 0:
                raise ParameterError(f"DP budget must be positive, got {self.chi}")
        else:
            raise ParameterError(f"unknown framework {self.framework!r}")


def leakage_pl(delta_norm: float, c: PrivacyConstants) -> float:
    if c.attack_rounds == 0:
        return 0.0
    if delta_norm < 0:
        raise ParameterError("distortion norm must be >= 0")
    value = 1.0 - (c.c_a * delta_norm + c.attack_term) / (2.0 * c.D)
    return min(1.0, max(0.0, value))


def invert_budget_pl(chi: float, c: PrivacyConstants) -> float:
    """Smallest distortion norm whose PL leakage does not exceed ``chi``."""
    if not 0 <= chi <= 1:
        raise ParameterError(f"PL budget must lie in [0, 1], got {chi}")
    return max(0.0, (c.a1 - chi) / c.a2)


def leakage_dp(sigma: float, dp: DpParams) -> float:
    if not sigma > 0:
        raise ParameterError("sigma must be positive")
    return dp.eta * dp.sensitivity * sigma


def invert_budget_dp(chi: float, dp: DpParams) -> float:
    if not chi > 0:
        raise ParameterError("DP budget must be positive")
    return chi / (dp.eta * dp.sensitivity)


def laplace_scale(chi: float, dp: DpParams) -> float:
    """Laplace scale b = 1/sigma = eta * S / chi."""
    return 1.0 / invert_budget_dp(chi, dp)


def shell_bounds(budget: PrivacyBudget, c: PrivacyConstants, dp: DpParams | None = None) -> ShellBounds:
    if budget.framework == PL:
        l = invert_budget_pl(budget.chi, c)
    else:
        if dp is None:
            raise ParameterError("DP shell bounds need DpParams")
        # RMS norm of dp.dim iid Laplace(b) coordinates: E||x||^2 = 2 m b^2
        l = laplace_scale(budget.chi, dp) * math.sqrt(2.0 * dp.dim)
    return ShellBounds(l, 2.0 * l)


@dataclass(frozen=True)
class LeakageBound:
    value: float
    applicable: bool


def leakage_upper_bound(delta_norm: float, c: PrivacyConstants, denominator: str = "4D") -> LeakageBound:
    """Upper bound on PL leakage using a ``2D`` or ``4D`` denominator.

    ``applicable`` is False when neither case condition of the bound holds; the
    value is still returned.
    """
    if denominator not in ("2D", "4D"):
        raise ParameterError("denominator must be '2D' or '4D'")
    if c.attack_rounds == 0:
        return LeakageBound(0.0, True)
    decay = c.attack_rounds ** (c.p - 1.0)
    applicable = (
        delta_norm >= 2.0 * c.c_2 * c.c_b / c.c_a * decay
        or delta_norm <= c.c_a * c.c_0 / (2.0 * c.c_b) * decay
    )
    scale = 2.0 if denominator == "2D" else 4.0
    return LeakageBound(1.0 - (c.c_a * delta_norm + c.attack_term) / (scale * c.D), applicable)
