"""Sharp-cutoff scaling theory for moments and g2(0) near criticality.

The discrete tail is replaced by ``p(n) = A n^-nu`` on ``[1, 1/delta]``.
Divergence classes describe the leading behaviour as ``delta -> 0+`` in the
form ``delta^-power * ln(1/delta)^log_power``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

__all__ = [
    "DivergenceClass",
    "ScalingPrediction",
    "normalization",
    "proxy_moment",
    "proxy_g2",
    "classify_moment",
    "classify_g2",
    "classify_divergences",
]

_EXACT = 1e-12  # tolerance for landing exactly on a boundary exponent


@dataclass(frozen=True)
class DivergenceClass:
    power: float = 0.0
    log_power: int = 0
    reconstructed: bool = False

    @property
    def finite(self) -> bool:
        return self.power == 0.0 and self.log_power == 0

    @property
    def kind(self) -> str:
        if self.finite:
            return "finite"
        if self.power == 0.0:
            return "logarithmic"
        return "power"

    def __call__(self, delta: float) -> float:
        """Evaluate the leading scaling form (up to a constant)."""
        return delta ** (-self.power) * math.log(1.0 / delta) ** self.log_power

    def describe(self) -> str:
        if self.finite:
            return "finite"
        parts = []
        if self.power:
            parts.append(f"delta^-{self.power:g}")
        if self.log_power:
            parts.append(f"ln(1/delta)^{self.log_power:d}")
        return " * ".join(parts)


FINITE = DivergenceClass()


@dataclass
class ScalingPrediction:
    nu: float
    moment_classes: dict[int, DivergenceClass]
    g2_class: DivergenceClass
    delta: float | None = None
    A: float | None = None
    moments: dict[int, float] = field(default_factory=dict)


def _is(x: float, target: float) -> bool:
    return abs(x - target) <= _EXACT * max(1.0, abs(target))


def normalization(nu: float, delta: float) -> float:
    if nu <= 0 or not 0 < delta < 1:
        raise ValueError("need nu > 0 and 0 < delta < 1")
    if _is(nu, 1.0):
        return 1.0 / math.log(1.0 / delta)
    # (nu - 1) / (1 - delta^(nu-1)) written to stay accurate near nu = 1
    x = (nu - 1.0) * math.log(delta)
    return (nu - 1.0) / -math.expm1(x)


def proxy_moment(nu: float, delta: float, k: int) -> float:
    """``<n^k>`` of the truncated continuous power law."""
    if k < 1:
        raise ValueError("k must be >= 1")
    A = normalization(nu, delta)
    e = k - nu + 1.0
    if _is(nu, k + 1.0):
        return A * math.log(1.0 / delta)
    # (delta^-e - 1) / e
    return A * math.expm1(-e * math.log(delta)) / e


def proxy_g2(nu: float, delta: float) -> float:
    m1 = proxy_moment(nu, delta, 1)
    m2 = proxy_moment(nu, delta, 2)
    return (m2 - m1) / m1**2


def classify_moment(nu: float, k: int) -> DivergenceClass:
    if nu <= 0:
        raise ValueError("nu must be positive")
    if nu < 1 and not _is(nu, 1.0):
        return DivergenceClass(power=float(k))
    if _is(nu, 1.0):
        return DivergenceClass(power=float(k), log_power=-1)
    if _is(nu, k + 1.0):
        return DivergenceClass(log_power=1)
    if nu < k + 1:
        return DivergenceClass(power=k - nu + 1.0)
    return FINITE


def classify_g2(nu: float) -> DivergenceClass:
    """Leading behaviour of ``(<n^2> - <n>) / <n>^2``.

    The ``nu = 2`` class ``delta^-1 ln(1/delta)^-2`` is reconstructed from
    the ratio of the adjacent moment classes.
    """
    if nu <= 0:
        raise ValueError("nu must be positive")
    if _is(nu, 1.0):
        return DivergenceClass(log_power=1)
    if nu < 1:
        return FINITE
    if _is(nu, 2.0):
        return DivergenceClass(power=1.0, log_power=-2, reconstructed=True)
    if nu < 2:
        return DivergenceClass(power=nu - 1.0)
    if _is(nu, 3.0):
        return DivergenceClass(log_power=1)
    if nu < 3:
        # <n> finite, <n^2> ~ delta^-(3-nu)
        return DivergenceClass(power=3.0 - nu)
    return FINITE


def classify_divergences(nu: float, max_k: int = 4, delta: float | None = None) -> ScalingPrediction:
    pred = ScalingPrediction(
        nu=nu,
        moment_classes={k: classify_moment(nu, k) for k in range(1, max_k + 1)},
        g2_class=classify_g2(nu),
        delta=delta,
    )
    if delta is not None:
        pred.A = normalization(nu, delta)
        pred.moments = {k: proxy_moment(nu, delta, k) for k in range(1, max_k + 1)}
    return pred
