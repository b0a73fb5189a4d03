"""Power-law fits, quantiles and seeded sampling of number distributions."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as _st

from .mboson import MBosonParams, NumberDistribution, predict_tail

__all__ = [
    "PowerLawFit",
    "SampleReport",
    "fit_power_law",
    "fit_log_log",
    "default_window",
    "quantile",
    "sample",
    "make_rng",
]


@dataclass(frozen=True)
class PowerLawFit:
    nu_hat: float
    window: tuple[int, int]
    intercept: float
    stderr: float
    r_squared: float
    n_points: int

    def to_dict(self) -> dict:
        return {
            "nu_hat": self.nu_hat,
            "window": list(self.window),
            "intercept": self.intercept,
            "stderr": self.stderr,
            "r_squared": self.r_squared,
            "n_points": self.n_points,
        }


@dataclass
class SampleReport:
    counts: np.ndarray  # counts[n] = number of draws equal to n
    n_samples: int
    median: int
    p90: float
    max_observed: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "median": self.median,
            "p90": self.p90,
            "max_observed": self.max_observed,
            "seed": self.seed,
        }


def fit_log_log(x, y, window=None) -> PowerLawFit:
    """OLS of ``ln|y|`` against ``ln x`` on ``window[0] <= x <= window[1]``.

    Returns the negated slope as ``nu_hat``.
    """
    x = np.asarray(x, dtype=float)
    y = np.abs(np.asarray(y, dtype=float))
    if window is None:
        window = (x.min(), x.max())
    lo, hi = window
    if lo <= 0:
        raise ValueError("window must lie in x > 0")
    if hi < 4 * lo:
        raise ValueError(f"window {window} is narrower than half a decade (hi >= 4 lo)")
    sel = (x >= lo) & (x <= hi)
    if sel.sum() < 3:
        raise ValueError("fewer than three points inside the fit window")
    if np.any(y[sel] <= 0) or not np.all(np.isfinite(y[sel])):
        raise ValueError("zero or non-finite value inside the fit window")
    res = _st.linregress(np.log(x[sel]), np.log(y[sel]))
    return PowerLawFit(
        nu_hat=float(-res.slope),
        window=(lo, hi),
        intercept=float(res.intercept),
        stderr=float(res.stderr),
        r_squared=float(res.rvalue**2),
        n_points=int(sel.sum()),
    )


def fit_power_law(dist: NumberDistribution, window: tuple[int, int]) -> PowerLawFit:
    """Fit ``rho_nn ~ n^-nu`` on every integer ``n`` in ``window``."""
    n_min, n_max = int(window[0]), int(window[1])
    if n_min < 1 or n_max > dist.truncation:
        raise ValueError(f"window {window} outside [1, {dist.truncation}]")
    n = np.arange(n_min, n_max + 1)
    logp = dist.log_probabilities[n_min : n_max + 1]
    if not np.all(np.isfinite(logp)):
        raise ValueError("zero probability inside the fit window")
    fit = fit_log_log(n, np.exp(logp - logp.max()), (n_min, n_max))
    # undo the rescaling used to keep exp() in range
    return PowerLawFit(
        nu_hat=fit.nu_hat,
        window=(n_min, n_max),
        intercept=fit.intercept + float(logp.max()),
        stderr=fit.stderr,
        r_squared=fit.r_squared,
        n_points=fit.n_points,
    )


def default_window(params: MBosonParams, truncation: int) -> tuple[int, int]:
    """Stay clear of the small-n head and of the cut-off / truncation edge."""
    lo = max(10, 5 * params.M)
    hi = truncation // 10
    tail = predict_tail(params) if params.M >= 2 else None
    if tail is not None and tail.has_tail and math.isfinite(tail.xi):
        hi = min(hi, int(0.1 * tail.xi))
    if hi < 4 * lo:
        raise ValueError("no usable power-law window for these parameters")
    return lo, hi


def quantile(dist: NumberDistribution, q: float) -> int:
    """Smallest ``n`` with ``CDF(n) >= q``, from the exact distribution."""
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    return int(np.searchsorted(dist.cdf(), q, side="left"))


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based Philox stream keyed by a 64-bit seed."""
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


def sample(dist: NumberDistribution, n_samples: int, seed: int) -> SampleReport:
    """Draw ``n_samples`` i.i.d. Fock numbers by inverse-CDF search."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    cdf = dist.cdf()
    u = make_rng(seed).random(n_samples)
    draws = np.searchsorted(cdf, u, side="right")
    draws = np.minimum(draws, dist.truncation)
    counts = np.bincount(draws)
    ecdf = np.cumsum(counts) / n_samples
    return SampleReport(
        counts=counts,
        n_samples=n_samples,
        median=int(np.searchsorted(ecdf, 0.5, side="left")),
        p90=float(np.percentile(draws, 90)),
        max_observed=int(draws.max()),
        seed=int(seed),
    )
