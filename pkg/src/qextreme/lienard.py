"""Cubic quantum Lienard oscillator and its rotating-wave (Stuart-Landau) limit.

Master equation

    d rho/dt = -i[H0 + H1, rho] + k0 D[a+] + (k2/2) D[a+ a - a+^2/2] + (3 k2/8) D[a^2]

with ``H0 = (k1+1)/2 a+a + (3 k3/8) a+^2 a^2`` and the squeezing-type drive

    H1 = (i/4)[k0 - i(k1-1)] a^2 - (i/4)(k2/2 + i k3) a+ a^3 - (i/16)(k2 + i k3) a^4 + h.c.

Superoperators act on ``vec(rho)`` stacked column by column (Fortran
order), so ``vec(A rho B) = (B^T kron A) vec(rho)`` and the entry
``rho[n, m]`` sits at index ``n + (N+1) m``.  Every operator changes the
Fock number by 0, 1, 2 or 4 in a way that preserves the parity of
``n - m``; solvers work in the even sector, which contains the vacuum.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import solve_ivp

from .stats import PowerLawFit, fit_log_log

__all__ = [
    "LienardParams",
    "LienardOperators",
    "DensityMatrix",
    "SolverError",
    "annihilation",
    "build_operators",
    "build_rwa_model",
    "build_liouvillian",
    "apply_lindblad",
    "steady_state_lienard",
    "coherence_scaling",
    "ehrenfest_rhs",
    "normal_ordered_expectation",
]

log = logging.getLogger(__name__)

EDGE_TOL = 1e-6
RESIDUAL_TOL = 1e-8


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class LienardParams:
    k0: float
    k1: float
    k2: float
    k3: float

    def __post_init__(self):
        for name in ("k0", "k1", "k2", "k3"):
            v = float(getattr(self, name))
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and non-negative, got {v}")
            object.__setattr__(self, name, v)

    def as_tuple(self):
        return (self.k0, self.k1, self.k2, self.k3)


@dataclass
class LienardOperators:
    hamiltonian: sp.csr_matrix
    jump_ops: list  # [(rate, csr_matrix), ...]
    truncation: int
    h0: sp.csr_matrix
    h1: sp.csr_matrix
    rwa: bool = False


@dataclass
class DensityMatrix:
    elements: np.ndarray
    truncation: int
    residual: float = float("nan")
    edge_population: float = 0.0
    warnings: list[str] = field(default_factory=list)

    @property
    def populations(self) -> np.ndarray:
        return np.real(np.diagonal(self.elements)).copy()

    def band(self, d: int) -> np.ndarray:
        """``rho[n, n+d]`` for ``n = 0..N-d``."""
        return np.diagonal(self.elements, d)

    def expect(self, op) -> complex:
        op = op.toarray() if sp.issparse(op) else np.asarray(op)
        return complex(np.trace(op @ self.elements))

    def mean_number(self) -> float:
        n = np.arange(self.truncation + 1)
        return float(np.dot(n, self.populations))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.elements).min())


# ---------------------------------------------------------------------------
# operators


def annihilation(truncation: int) -> sp.csr_matrix:
    return sp.diags(np.sqrt(np.arange(1, truncation + 1, dtype=float)), 1, format="csr")


def _ladder(truncation):
    a = annihilation(truncation).astype(complex)
    ad = a.T.tocsr()
    return a, ad


def _h0(a, ad, p: LienardParams):
    return (p.k1 + 1) / 2 * (ad @ a) + 3 * p.k3 / 8 * (ad @ ad @ a @ a)


def _check_truncation(truncation):
    if int(truncation) != truncation or truncation < 8:
        raise ValueError("truncation must be an integer >= 8")


def build_operators(params: LienardParams, truncation: int) -> LienardOperators:
    _check_truncation(truncation)
    if not isinstance(params, LienardParams):
        raise TypeError("params must be LienardParams")
    k0, k1, k2, k3 = params.as_tuple()
    a, ad = _ladder(truncation)
    a2 = a @ a
    h0 = _h0(a, ad, params)
    drive = (
        0.25j * (k0 - 1j * (k1 - 1)) * a2
        - 0.25j * (k2 / 2 + 1j * k3) * (ad @ a2 @ a)
        - 1j / 16 * (k2 + 1j * k3) * (a2 @ a2)
    )
    h1 = (drive + drive.conj().T).tocsr()
    jumps = [
        (k0, ad.tocsr()),
        (k2 / 2, (ad @ a - 0.5 * (ad @ ad)).tocsr()),
        (3 * k2 / 8, a2.tocsr()),
    ]
    return LienardOperators((h0 + h1).tocsr(), jumps, int(truncation), h0.tocsr(), h1)


def build_rwa_model(params: LienardParams, truncation: int) -> LienardOperators:
    """Rotating-wave approximation, intended for ``k2`` much smaller than the rest."""
    _check_truncation(truncation)
    if not isinstance(params, LienardParams):
        raise TypeError("params must be LienardParams")
    k0, k1, k2, k3 = params.as_tuple()
    a, ad = _ladder(truncation)
    a2 = a @ a
    h0 = _h0(a, ad, params)
    drive = 0.25j * (k0 - 1j * (k1 - 1)) * a2 + k3 / 4 * (ad @ a2 @ a) + k3 / 16 * (a2 @ a2)
    h1 = (drive + drive.conj().T).tocsr()
    jumps = [(k0, ad.tocsr()), (k2 / 2, (ad @ a).tocsr()), (3 * k2 / 8, a2.tocsr())]
    return LienardOperators((h0 + h1).tocsr(), jumps, int(truncation), h0.tocsr(), h1, rwa=True)


# ---------------------------------------------------------------------------
# Liouvillian


def build_liouvillian(ops: LienardOperators) -> sp.csr_matrix:
    """Sparse ``L`` with ``L @ vec(rho) = vec(-i[H, rho] + sum_j G_j D[c_j] rho)``."""
    dim = ops.truncation + 1
    H = ops.hamiltonian
    if H.shape != (dim, dim):
        raise ValueError("operator shape does not match truncation")
    eye = sp.identity(dim, dtype=complex, format="csr")
    L = -1j * (sp.kron(eye, H) - sp.kron(H.T, eye))
    for rate, c in ops.jump_ops:
        if rate == 0:
            continue
        if c.shape != (dim, dim):
            raise ValueError("jump operator shape does not match truncation")
        cdc = (c.conj().T @ c).tocsr()
        L = L + rate * (sp.kron(c.conj(), c) - 0.5 * sp.kron(eye, cdc) - 0.5 * sp.kron(cdc.T, eye))
    return L.tocsr()


def apply_lindblad(ops: LienardOperators, rho: np.ndarray) -> np.ndarray:
    """Direct matrix evaluation of the master-equation right-hand side."""
    H = ops.hamiltonian.toarray()
    out = -1j * (H @ rho - rho @ H)
    for rate, c in ops.jump_ops:
        c = c.toarray()
        cd = c.conj().T
        cdc = cd @ c
        out += rate * (c @ rho @ cd - 0.5 * (cdc @ rho + rho @ cdc))
    return out


def _even_sector(dim):
    n = np.arange(dim)
    N, M = np.meshgrid(n, n, indexing="ij")  # N: row index, M: column index
    mask = ((N - M) % 2 == 0).ravel(order="F")
    return np.flatnonzero(mask)


def _trace_indices(dim, sector):
    diag = np.arange(dim) * (dim + 1)
    pos = np.searchsorted(sector, diag)
    return pos


# ---------------------------------------------------------------------------
# steady state


def _finish(vec_sector, sector, dim, L, edge_tol, strict_edge):
    full = np.zeros(dim * dim, dtype=complex)
    full[sector] = vec_sector
    rho = full.reshape(dim, dim, order="F")
    rho = 0.5 * (rho + rho.conj().T)
    tr = np.trace(rho).real
    if not np.isfinite(tr) or tr <= 0:
        raise SolverError("steady state has non-positive trace")
    rho /= tr
    v = rho.ravel(order="F")
    l_norm = spla.norm(L)  # Frobenius
    residual = float(np.linalg.norm(L @ v) / (l_norm * np.linalg.norm(v)))
    out = DensityMatrix(rho, dim - 1, residual=residual)
    out.edge_population = float(abs(rho[-1, -1].real))
    if out.edge_population > edge_tol:
        msg = (
            f"population at truncation edge {out.edge_population:.3g} exceeds {edge_tol:g}; "
            "enlarge the truncation"
        )
        if strict_edge:
            raise SolverError(msg)
        out.warnings.append(msg)
    if residual > RESIDUAL_TOL:
        raise SolverError(f"steady-state residual {residual:.3g} exceeds {RESIDUAL_TOL:g}")
    return out


def _solve_direct(Ls, tr_pos, scale=None):
    """Sparse LU of the sector system with one population equation swapped
    for the trace.  ``scale`` (per unknown) applies the similarity
    ``D^-1 L D`` so that tiny tail elements are resolved to relative rather
    than absolute precision."""
    n = Ls.shape[0]
    if scale is not None:
        Ls = (sp.diags(1.0 / scale) @ Ls @ sp.diags(scale)).tocsr()
    A = Ls.tolil()
    # the left null vector is the trace, so only a population equation can be
    # dropped without losing rank; take the best-conditioned one
    diag_mag = np.abs(Ls.diagonal()[tr_pos])
    row = int(tr_pos[np.argmax(diag_mag)])
    A[row, :] = 0
    A[row, tr_pos] = 1.0 if scale is None else scale[tr_pos]
    b = np.zeros(n, dtype=complex)
    b[row] = 1.0
    A = A.tocsc()
    lu = spla.splu(A, permc_spec="COLAMD")
    x = lu.solve(b)
    # one refinement step against the constrained system
    x = x + lu.solve(b - A @ x)
    return x if scale is None else x * scale


_NOISE = 1e-13  # populations below this fraction of the peak are not trusted
_MIN_LOG = -600.0


def _envelope_scale(pops, dim, sector):
    """Per-unknown scale ``sqrt(p_n p_m)`` built from a trusted population
    envelope, extrapolated log-linearly past the double-precision floor.
    Returns ``None`` when no rescaling is needed."""
    peak = pops.max()
    trusted = pops > _NOISE * peak
    if trusted.all():
        return None
    last = int(np.argmin(trusted)) - 1  # last index of the leading trusted run
    if last < 8:
        return None
    logp = np.full(dim, _MIN_LOG)
    logp[: last + 1] = np.log(pops[: last + 1])
    tail = np.arange(last - 5, last + 1)
    slope = min(np.polyfit(tail, logp[tail], 1)[0], 0.0)
    logp[last + 1 :] = logp[last] + slope * np.arange(1, dim - last)
    logp = np.maximum(logp - logp.max(), _MIN_LOG)
    rows = sector % dim
    cols = sector // dim
    return np.exp(0.5 * (logp[rows] + logp[cols]))


def _solve_evolve(Ls, tr_pos, max_time, check_every):
    n = Ls.shape[0]
    x = np.zeros(n, dtype=complex)
    x[tr_pos[0]] = 1.0  # vacuum
    l_norm = spla.norm(Ls)
    jac = Ls.tocsc()
    t = 0.0
    span = check_every
    while t < max_time:
        sol = solve_ivp(
            lambda _t, y: Ls @ y,
            (t, t + span),
            x,
            method="BDF",
            jac=jac,
            rtol=1e-11,
            atol=1e-14,
        )
        if not sol.success:
            raise SolverError(f"time integration failed: {sol.message}")
        x_new = sol.y[:, -1]
        tr = x_new[tr_pos].sum()
        if abs(tr - 1.0) > 1e-8:
            raise SolverError(f"trace drifted to {tr} during evolution")
        t += span
        change = np.linalg.norm(x_new - x)
        x = x_new
        resid = np.linalg.norm(Ls @ x) / (l_norm * np.linalg.norm(x))
        log.debug("evolve t=%g residual=%.3g change=%.3g", t, resid, change)
        if resid < 1e-13 and change < 1e-10:
            return x
        span *= 2
    raise SolverError(f"evolution did not converge by t={max_time}")


def steady_state_lienard(
    params: LienardParams | LienardOperators,
    truncation: int | None = None,
    method: str = "direct",
    *,
    rwa: bool = False,
    edge_tol: float = EDGE_TOL,
    strict_edge: bool = False,
    max_time: float = 1e5,
) -> DensityMatrix:
    """Stationary density matrix in the even ``n - m`` sector.

    ``direct`` replaces one equation with the trace constraint and factorizes
    the sparse system; ``evolve`` integrates from the vacuum with an implicit
    adaptive BDF scheme until the state stops changing. Population above
    ``edge_tol`` on the top Fock level is reported in ``warnings`` (or raised
    with ``strict_edge``).
    """
    if isinstance(params, LienardOperators):
        ops = params
    else:
        if params.k0 == 0 and params.k2 == 0:
            raise ValueError("need k0 > 0 or k2 > 0 for a dissipative steady state")
        builder = build_rwa_model if rwa else build_operators
        ops = builder(params, truncation)
    dim = ops.truncation + 1
    L = build_liouvillian(ops)
    sector = _even_sector(dim)
    Ls = L[sector][:, sector].tocsr()
    tr_pos = _trace_indices(dim, sector)
    if method == "direct":
        x = _solve_direct(Ls, tr_pos)
        for _ in range(3):
            scale = _envelope_scale(np.real(x[tr_pos]) / np.real(x[tr_pos].sum()), dim, sector)
            if scale is None:
                break
            x = _solve_direct(Ls, tr_pos, scale)
    elif method == "evolve":
        x = _solve_evolve(Ls, tr_pos, max_time, check_every=10.0)
    else:
        raise ValueError(f"unknown method {method!r}")
    if not np.all(np.isfinite(x)):
        raise SolverError("solver returned non-finite values")
    return _finish(x, sector, dim, L, edge_tol, strict_edge)


def coherence_scaling(rho: DensityMatrix, offsets, window) -> dict[int, PowerLawFit]:
    """Power-law fit of ``|rho[n, n+d]|`` against ``n`` for each even offset ``d``."""
    lo, hi = int(window[0]), int(window[1])
    out = {}
    for d in offsets:
        d = int(d)
        if d % 2:
            raise ValueError(f"odd offset {d}: these elements vanish identically")
        if d < 0 or hi + d > rho.truncation:
            raise ValueError(f"window {window} with offset {d} exceeds truncation {rho.truncation}")
        band = np.abs(rho.band(d))
        n = np.arange(len(band))
        out[d] = fit_log_log(n, np.where(band > 0, band, np.nan), (lo, hi)) if lo > 0 else None
    return out


# ---------------------------------------------------------------------------
# Ehrenfest relations


def normal_ordered_expectation(rho: np.ndarray, poly: dict[tuple[int, int], complex]) -> complex:
    """``sum c_jk <a+^j a^k>`` for a normal-ordered polynomial ``{(j, k): c}``."""
    dim = rho.shape[0]
    a = annihilation(dim - 1).toarray()
    ad = a.T
    total = 0.0j
    for (j, k), c in poly.items():
        op = np.linalg.matrix_power(ad, j) @ np.linalg.matrix_power(a, k)
        total += c * np.trace(op @ rho)
    return total


def _quad_poly(nq: int, np_: int) -> dict[tuple[int, int], complex]:
    """Normal-ordered expansion of ``q^nq p^np`` with c-number ``alpha``."""
    # q = (alpha + alpha*)/sqrt2, p = -i(alpha - alpha*)/sqrt2; keys are (power of alpha*, power of alpha)
    poly = {(0, 0): 1.0 + 0j}

    def mul(poly, lin):
        out = {}
        for (j, k), c in poly.items():
            for (dj, dk), cc in lin.items():
                key = (j + dj, k + dk)
                out[key] = out.get(key, 0) + c * cc
        return out

    s = 1 / math.sqrt(2)
    q = {(0, 1): s, (1, 0): s}
    p = {(0, 1): -1j * s, (1, 0): 1j * s}
    for _ in range(nq):
        poly = mul(poly, q)
    for _ in range(np_):
        poly = mul(poly, p)
    return poly


def ehrenfest_rhs(params: LienardParams, rho: np.ndarray) -> tuple[complex, complex]:
    """Target ``(d<q>/dt, d<p>/dt)`` of the cubic Lienard dynamics in state ``rho``."""
    k0, k1, k2, k3 = params.as_tuple()
    E = lambda nq, np_: normal_ordered_expectation(rho, _quad_poly(nq, np_))  # noqa: E731
    dq = E(0, 1)
    dp = k0 * E(0, 1) - k2 * E(2, 1) - k1 * E(1, 0) - k3 * E(3, 0)
    return dq, dp
