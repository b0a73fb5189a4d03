"""Wigner functions in the Fock basis.

Conventions: ``alpha = (q + i p) / sqrt(2)`` and ``r = |alpha|``, so
``q^2 + p^2 = 2 r^2``.  All Wigner values are densities in the ``(q, p)``
plane (``int W dq dp = 1``); the vacuum peaks at ``1/pi``.  For a
rotationally symmetric state that means ``4 pi int_0^inf r W(r) dr = 1``.

Kernels are evaluated through normalized associated Laguerre functions

    f_m^(d)(x) = sqrt(m!/(m+d)!) x^(d/2) exp(-x/2) L_m^(d)(x),  x = 4 r^2,

advanced by upward recurrence in ``m`` with a shared log-scale so that
neither ``exp(-x/2)`` nor the bare polynomials over/underflow.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.interpolate import CubicSpline
from scipy.special import beta, betainc

from .mboson import NumberDistribution
from .stats import PowerLawFit, fit_log_log

__all__ = [
    "RadialWigner",
    "PhaseSpaceGrid",
    "fock_wigner_radial",
    "radial_wigner",
    "full_wigner",
    "quadrature_marginal",
    "number_marginal",
    "fit_wigner_tail",
]

_RESCALE = 1e100
_LOG_RESCALE = math.log(_RESCALE)
_TAIL_REL = 1e-12


@dataclass
class RadialWigner:
    radii: np.ndarray
    values: np.ndarray

    @property
    def R(self) -> np.ndarray:
        return self.radii**2

    def norm(self) -> float:
        """Trapezoid estimate of ``4 pi int r W(r) dr``."""
        return float(4.0 * np.pi * np.trapezoid(self.radii * self.values, self.radii))


@dataclass
class PhaseSpaceGrid:
    q_axis: np.ndarray
    p_axis: np.ndarray
    values: np.ndarray  # values[i, j] = W(q_axis[i], p_axis[j])
    imag_residue: float = 0.0

    def norm(self) -> float:
        return float(np.trapezoid(np.trapezoid(self.values, self.p_axis, axis=1), self.q_axis))


# ---------------------------------------------------------------------------
# kernels


@njit(cache=True)
def _laguerre_fn(n, x):
    """(-1)^n exp(-x/2) L_n(x) for a vector of x >= 0."""
    out = np.empty(x.shape[0])
    for i in range(x.shape[0]):
        xi = x[i]
        prev = 0.0
        cur = 1.0
        scale = -0.5 * xi
        for m in range(n):
            nxt = ((2 * m + 1 - xi) * cur - m * prev) / (m + 1)
            prev = cur
            cur = nxt
            if abs(cur) > _RESCALE:
                cur /= _RESCALE
                prev /= _RESCALE
                scale += _LOG_RESCALE
        if cur == 0.0:
            out[i] = 0.0
        else:
            v = math.exp(math.log(abs(cur)) + scale)
            out[i] = v if (cur > 0) == (n % 2 == 0) else -v
    return out


@njit(cache=True)
def _radial_sum(logp, suffix, x):
    """sum_n p_n (-1)^n exp(-x/2) L_n(x) with compensated summation."""
    N = logp.shape[0] - 1
    out = np.empty(x.shape[0])
    for i in range(x.shape[0]):
        xi = x[i]
        prev = 0.0
        cur = 1.0
        scale = -0.5 * xi
        acc = 0.0
        comp = 0.0
        for m in range(N + 1):
            if m > 0:
                nxt = ((2 * m - 1 - xi) * cur - (m - 1) * prev) / m
                prev = cur
                cur = nxt
                if abs(cur) > _RESCALE:
                    cur /= _RESCALE
                    prev /= _RESCALE
                    scale += _LOG_RESCALE
            if cur != 0.0 and logp[m] > -np.inf:
                e = math.log(abs(cur)) + scale + logp[m]
                if e > -745.0:
                    t = math.exp(e)
                    if (cur < 0) != (m % 2 == 1):
                        t = -t
                    y = t - comp
                    s = acc + y
                    comp = (s - acc) - y
                    acc = s
            if m < N and suffix[m + 1] < _TAIL_REL * abs(acc):
                break
        out[i] = acc / np.pi
    return out


@njit(cache=True)
def _offdiag_sum(rho_band, d, x):
    """sum_m rho[m, m+d] (-1)^m f_m^(d)(x) for each x; rho_band[m] = rho[m, m+d]."""
    L = rho_band.shape[0]
    out = np.zeros(x.shape[0], dtype=np.complex128)
    lg = 0.0
    for j in range(2, d + 1):
        lg += math.log(j)
    for i in range(x.shape[0]):
        xi = x[i]
        if xi == 0.0:
            if d == 0:
                # W(0) is the parity expectation value
                acc0 = 0.0 + 0.0j
                for m in range(L):
                    acc0 += rho_band[m] if m % 2 == 0 else -rho_band[m]
                out[i] = acc0
            continue
        prev = 0.0
        cur = 1.0
        scale = 0.5 * d * math.log(xi) - 0.5 * xi - 0.5 * lg
        acc = 0.0 + 0.0j
        for m in range(L):
            if m > 0:
                k = m - 1
                nxt = ((2 * k + 1 + d - xi) * cur - math.sqrt(k * (k + d)) * prev) / math.sqrt(
                    (k + 1) * (k + 1 + d)
                )
                prev = cur
                cur = nxt
                if abs(cur) > _RESCALE:
                    cur /= _RESCALE
                    prev /= _RESCALE
                    scale += _LOG_RESCALE
            if cur != 0.0:
                e = math.log(abs(cur)) + scale
                if e > -745.0:
                    v = math.exp(e)
                    if (cur < 0) != (m % 2 == 1):
                        v = -v
                    acc += rho_band[m] * v
        out[i] = acc
    return out


# ---------------------------------------------------------------------------
# public API


def fock_wigner_radial(n: int, radii) -> np.ndarray:
    """``W_n(r) = (-1)^n / pi * exp(-2 r^2) L_n(4 r^2)``."""
    if n < 0:
        raise ValueError("n must be >= 0")
    r = np.atleast_1d(np.asarray(radii, dtype=float))
    return _laguerre_fn(int(n), 4.0 * r * r) / np.pi


def radial_wigner(dist: NumberDistribution, radii) -> RadialWigner:
    """Wigner function of a number-diagonal state on a grid of ``r = |alpha|``.

    The Fock sum stops once the remaining probability mass (a bound on the
    rest, since ``|exp(-x/2) L_n(x)| <= 1``) drops below 1e-12 of the
    running value.
    """
    r = np.asarray(radii, dtype=float)
    if r.ndim != 1 or np.any(np.diff(r) <= 0) or r[0] < 0:
        raise ValueError("radii must be a strictly increasing non-negative grid")
    logp = np.ascontiguousarray(dist.log_probabilities)
    p = np.exp(logp)
    suffix = np.cumsum(p[::-1])[::-1].copy()
    return RadialWigner(radii=r, values=_radial_sum(logp, suffix, 4.0 * r * r))


def full_wigner(rho, q_axis, p_axis, max_offset: int | None = None, atol: float = 1e-15) -> PhaseSpaceGrid:
    """Wigner function of a Fock-basis density matrix on a ``(q, p)`` grid.

    Off-diagonal bands whose largest entry is below ``atol`` are skipped.
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError("rho must be square")
    scale = max(np.abs(rho).max(), 1e-300)
    if np.abs(rho - rho.conj().T).max() > 1e-10 * scale:
        raise ValueError("rho is not Hermitian")
    dim = rho.shape[0]
    q = np.asarray(q_axis, dtype=float)
    p = np.asarray(p_axis, dtype=float)
    Q, P = np.meshgrid(q, p, indexing="ij")
    alpha = (Q + 1j * P).ravel() / np.sqrt(2.0)
    x = np.ascontiguousarray(4.0 * np.abs(alpha) ** 2)
    phase = np.exp(1j * np.angle(alpha))
    D = dim - 1 if max_offset is None else min(max_offset, dim - 1)

    total = _offdiag_sum(np.ascontiguousarray(np.diagonal(rho)), 0, x)
    for d in range(1, D + 1):
        upper = np.ascontiguousarray(np.diagonal(rho, d))
        if np.abs(upper).max() < atol:
            continue
        lower = np.ascontiguousarray(np.diagonal(rho, -d))
        # |m><m+d| carries (2 alpha)^d, its adjoint (2 alpha*)^d
        total += phase**d * _offdiag_sum(upper, d, x) + phase.conj() ** d * _offdiag_sum(lower, d, x)
    total /= np.pi
    W = total.real.reshape(Q.shape)
    resid = float(np.abs(total.imag).max() / max(np.abs(total.real).max(), 1e-300))
    return PhaseSpaceGrid(q_axis=q, p_axis=p, values=W, imag_residue=resid)


def quadrature_marginal(w, axis: str = "q", points=None, n_u: int = 4001) -> np.ndarray:
    """Quadrature distribution ``P(q) = int W(q, p) dp`` (or ``P(p)`` for ``axis="p"``).

    For a :class:`PhaseSpaceGrid` this integrates over the other axis. For a
    :class:`RadialWigner` the rotational symmetry gives
    ``P(q) = 2 int_0^inf W(rho) rho / sqrt(rho^2 - q^2) d rho`` with
    ``rho = sqrt(q^2 + p^2)``; the substitution ``rho = |q| cosh u`` removes
    the endpoint singularity. ``points`` are the ``q`` values to evaluate.
    """
    if axis not in ("q", "p"):
        raise ValueError("axis must be 'q' or 'p'")
    if isinstance(w, PhaseSpaceGrid):
        if axis == "q":
            return np.trapezoid(w.values, w.p_axis, axis=1)
        return np.trapezoid(w.values, w.q_axis, axis=0)
    if not isinstance(w, RadialWigner):
        raise TypeError("expected PhaseSpaceGrid or RadialWigner")
    if points is None:
        raise ValueError("points are required for radial input")
    pts = np.abs(np.asarray(points, dtype=float))
    rho_grid = np.sqrt(2.0) * w.radii
    rho_max = rho_grid[-1]
    if np.any(pts >= rho_max):
        raise ValueError("marginal requested beyond the radial grid")
    spline = CubicSpline(rho_grid, w.values)
    tail = _tail_model(rho_grid, w.values)
    out = np.empty_like(pts)
    for i, qv in enumerate(pts):
        if qv == 0.0:
            rr = np.linspace(0.0, rho_max, n_u)
            core = np.trapezoid(spline(rr), rr)
        else:
            u = np.linspace(0.0, np.arccosh(rho_max / qv), n_u)
            rr = qv * np.cosh(u)
            core = np.trapezoid(spline(rr) * rr, u)
        out[i] = 2.0 * (core + _tail_integral(tail, qv, rho_max))
    return out


def _tail_model(rho, values, frac=0.2):
    """Power law ``C rho^-s`` fitted to the outer part of the grid, or None."""
    n = max(int(frac * len(rho)), 3)
    rr, vv = rho[-n:], values[-n:]
    if rr[0] <= 0 or np.any(vv <= 0):
        return None
    slope, logc = np.polyfit(np.log(rr), np.log(vv), 1)
    if -slope <= 1.0:
        return None
    return math.exp(logc), -slope


def _tail_integral(tail, q, rho_max):
    """``int_{rho_max}^inf C rho^(1-s) / sqrt(rho^2 - q^2) d rho``."""
    if tail is None:
        return 0.0
    C, s = tail
    if q == 0.0:
        return C * rho_max ** (1.0 - s) / (s - 1.0)
    a, b = 0.5 * (s - 1.0), 0.5
    t0 = (q / rho_max) ** 2
    return C * q ** (1.0 - s) * 0.5 * betainc(a, b, t0) * beta(a, b)


@njit(cache=True)
def _hermite_sq_sum(logp, q):
    N = logp.shape[0] - 1
    out = np.empty(q.shape[0])
    for i in range(q.shape[0]):
        qi = q[i]
        prev = 0.0
        cur = 1.0
        scale = -0.5 * qi * qi - 0.25 * math.log(math.pi)
        acc = 0.0
        for n in range(N + 1):
            if n > 0:
                k = n - 1
                nxt = math.sqrt(2.0 / (k + 1)) * qi * cur - math.sqrt(k / (k + 1.0)) * prev
                prev = cur
                cur = nxt
                if abs(cur) > _RESCALE:
                    cur /= _RESCALE
                    prev /= _RESCALE
                    scale += _LOG_RESCALE
            if cur != 0.0 and logp[n] > -np.inf:
                e = 2.0 * (math.log(abs(cur)) + scale) + logp[n]
                if e > -745.0:
                    acc += math.exp(e)
        out[i] = acc
    return out


def number_marginal(dist: NumberDistribution, points) -> np.ndarray:
    """``P(q) = sum_n p_n psi_n(q)^2`` with oscillator eigenfunctions ``psi_n``.

    Independent of the Wigner route; valid for any number-diagonal state.
    """
    q = np.ascontiguousarray(np.atleast_1d(np.asarray(points, dtype=float)))
    return _hermite_sq_sum(np.ascontiguousarray(dist.log_probabilities), q)


def fit_wigner_tail(w: RadialWigner, window: tuple[float, float]) -> PowerLawFit:
    """Fit ``W ~ R^-nu`` in ``R = r^2`` over ``window``."""
    R = w.R
    lo, hi = window
    sel = (R >= lo) & (R <= hi)
    if not sel.any() or R[-1] < hi:
        raise ValueError("radial grid does not cover the fit window")
    if np.any(np.abs(w.values[sel]) < 1e-300):
        raise ValueError("Wigner values underflow inside the fit window")
    return fit_log_log(R, w.values, window)
