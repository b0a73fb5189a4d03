"""M-boson model: stationary number distribution and closed-form oracles.

The populations of the M-boson Lindblad model obey a classical master
equation on the Fock ladder in which level ``n`` jumps down by ``m`` at rate
``gamma_m * n (n-1) ... (n-m+1)`` and up by ``m`` at rate
``kappa_m * (n+1) ... (n+m)``.  Coherences decouple and decay, so the
steady state is fully described by the diagonal.

The state space is cut at ``truncation`` by dropping every up-jump whose
target lies above it (clipping).  The clipped generator conserves
probability exactly; adequacy of the cut is judged from the tail-mass
estimate stored on the result.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from numba import njit
from scipy.special import logsumexp

__all__ = [
    "MBosonParams",
    "NumberDistribution",
    "TailPrediction",
    "MomentSeries",
    "DivergentMomentError",
    "build_generator",
    "steady_state",
    "predict_tail",
    "mean_occupation_exact",
    "second_moment_exact",
    "moment_recurrence",
    "g_correlation",
    "g_correlation_asymptotic",
    "factorial_moment_asymptotic",
    "mean_occupation_time",
    "second_moment_time",
]

TAIL_MASS_TOL = 1e-8


class DivergentMomentError(ValueError):
    """A requested steady-state moment does not exist for this exponent."""


@dataclass(frozen=True)
class MBosonParams:
    """Rates of the M-boson model.

    ``gamma[m-1]`` and ``kappa[m-1]`` are the m-quantum loss and gain rates.
    """

    gamma: tuple[float, ...]
    kappa: tuple[float, ...]
    omega0: float = 0.0

    def __post_init__(self):
        gamma = tuple(float(g) for g in self.gamma)
        kappa = tuple(float(k) for k in self.kappa)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "kappa", kappa)
        if len(gamma) == 0 or len(gamma) != len(kappa):
            raise ValueError("gamma and kappa must be non-empty and of equal length")
        if any(g < 0 or not math.isfinite(g) for g in gamma + kappa):
            raise ValueError("rates must be finite and non-negative")
        if gamma[-1] <= 0:
            raise ValueError("the highest-order loss rate gamma_M must be positive")
        if kappa[-1] > gamma[-1]:
            raise ValueError(
                f"kappa_M={kappa[-1]} exceeds gamma_M={gamma[-1]}: no normalizable steady state"
            )

    @classmethod
    def two_boson(cls, gamma1, kappa1, gamma2, kappa2, omega0=0.0):
        return cls((gamma1, gamma2), (kappa1, kappa2), omega0)

    @classmethod
    def from_exponent(cls, nu, kappa1=0.0, gamma2=1.0, delta=0.0):
        """Two-boson model with ``nu = (gamma1 - kappa1) / (4 gamma2)`` and
        ``kappa2 = gamma2 (1 - delta)``."""
        gamma1 = 4.0 * gamma2 * nu + kappa1
        return cls.two_boson(gamma1, kappa1, gamma2, gamma2 * (1.0 - delta))

    @property
    def M(self) -> int:
        return len(self.gamma)

    @property
    def delta(self) -> float:
        """Distance from criticality, ``1 - kappa_M / gamma_M``."""
        return 1.0 - self.kappa[-1] / self.gamma[-1]

    @property
    def nu(self) -> float:
        """Tail exponent ``(M-1)/M^2 * (gamma_{M-1} - kappa_{M-1}) / gamma_M``."""
        M = self.M
        if M < 2:
            raise ValueError("M = 1 has no power-law regime")
        return (M - 1) / M**2 * (self.gamma[-2] - self.kappa[-2]) / self.gamma[-1]

    @property
    def is_critical(self) -> bool:
        return math.isclose(self.kappa[-1], self.gamma[-1], rel_tol=1e-12, abs_tol=0.0)

    def with_delta(self, delta: float) -> "MBosonParams":
        kappa = list(self.kappa)
        kappa[-1] = self.gamma[-1] * (1.0 - delta)
        return MBosonParams(self.gamma, tuple(kappa), self.omega0)


@dataclass
class NumberDistribution:
    """Stationary populations stored as natural logs of unnormalized weights."""

    log_weights: np.ndarray
    log_norm: float
    truncation: int
    tail_mass: float = 0.0
    residual: float = float("nan")
    warnings: list[str] = field(default_factory=list)

    @classmethod
    def from_probabilities(cls, probs, **kwargs):
        probs = np.asarray(probs, dtype=float)
        if np.any(probs < 0):
            raise ValueError("probabilities must be non-negative")
        with np.errstate(divide="ignore"):
            logw = np.log(probs)
        return cls(logw, float(logsumexp(logw)), len(probs) - 1, **kwargs)

    @property
    def log_probabilities(self) -> np.ndarray:
        return self.log_weights - self.log_norm

    @property
    def probabilities(self) -> np.ndarray:
        return np.exp(self.log_probabilities)

    @property
    def n(self) -> np.ndarray:
        return np.arange(self.truncation + 1)

    @property
    def tail_flagged(self) -> bool:
        return self.tail_mass > TAIL_MASS_TOL

    def factorial_moment(self, k: int) -> float:
        """``sum_n n (n-1) ... (n-k+1) p_n``, i.e. the steady-state <a^+k a^k>."""
        n = self.n.astype(float)
        ff = np.ones_like(n)
        for j in range(k):
            ff *= n - j
        return float(np.sum(ff * self.probabilities))

    def mean(self) -> float:
        return self.factorial_moment(1)

    def g2(self) -> float:
        return self.factorial_moment(2) / self.mean() ** 2

    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.probabilities)
        return c / c[-1]


@dataclass(frozen=True)
class TailPrediction:
    nu: float
    xi: float
    xi_approx: float
    delta: float
    has_tail: bool = True


@dataclass
class MomentSeries:
    """``values[k]`` holds <a^+k a^k>; entries with ``valid[k] == False`` diverge."""

    values: np.ndarray
    valid: np.ndarray
    nu: float

    @property
    def max_k(self) -> int:
        return len(self.values) - 1


# ---------------------------------------------------------------------------
# generator


def _falling(n: int, m: int) -> float:
    out = 1.0
    for j in range(m):
        out *= n - j
    return out


def _rising(n: int, m: int) -> float:
    out = 1.0
    for j in range(1, m + 1):
        out *= n + j
    return out


def _jump_rates(params: MBosonParams, truncation: int):
    """Down and up rates, shape ``(M, N+1)``; clipped up-jumps are zero."""
    M, N = params.M, truncation
    n = np.arange(N + 1, dtype=float)
    down = np.zeros((M, N + 1))
    up = np.zeros((M, N + 1))
    for m in range(1, M + 1):
        fall = np.ones(N + 1)
        rise = np.ones(N + 1)
        for j in range(m):
            fall *= n - j
            rise *= n + j + 1
        down[m - 1] = params.gamma[m - 1] * fall
        up[m - 1] = params.kappa[m - 1] * rise
        up[m - 1, N - m + 1:] = 0.0
    return down, up


def _check(params: MBosonParams, truncation: int):
    if not isinstance(params, MBosonParams):
        raise TypeError("params must be MBosonParams")
    if truncation < 2 * params.M:
        raise ValueError(f"truncation must be >= 2M = {2 * params.M}")


def build_generator(params: MBosonParams, truncation: int) -> sp.csc_matrix:
    """Column-convention rate matrix ``G`` with ``dp/dt = G @ p``.

    Bandwidth ``M`` on both sides. Up-jumps into ``n > truncation`` are
    dropped from both the gain and the loss side, so every column sums to 0.
    """
    _check(params, truncation)
    M, N = params.M, truncation
    down, up = _jump_rates(params, N)
    diag = -(down.sum(axis=0) + up.sum(axis=0))
    diagonals = [diag]
    offsets = [0]
    for m in range(1, M + 1):
        # G[n - m, n] = down_m(n), G[n + m, n] = up_m(n)
        diagonals.append(down[m - 1, m:])
        offsets.append(m)
        diagonals.append(up[m - 1, : N + 1 - m])
        offsets.append(-m)
    return sp.diags(diagonals, offsets, shape=(N + 1, N + 1), format="csc")


# ---------------------------------------------------------------------------
# steady state


@njit(cache=True)
def _rate(down, up, N, i, j):
    # row-convention rate i -> j on the padded ladder
    if i > N:
        return 1.0 if j == N else 0.0
    d = j - i
    if d < 0:
        return down[-d - 1, i]
    if d > 0:
        return up[d - 1, i]
    return 0.0


@njit(cache=True)
def _block(down, up, N, M, k, l):
    out = np.zeros((M, M))
    for a in range(M):
        i = k * M + a
        for b in range(M):
            j = l * M + b
            if i != j and abs(i - j) <= M:
                out[a, b] = _rate(down, up, N, i, j)
    return out


@njit(cache=True)
def _level_reduction(down, up, N, M):
    """Stationary vector of the banded chain by block linear level reduction.

    States are grouped in levels of ``M`` consecutive Fock numbers so that
    every jump connects neighbouring levels. With ``pi_{k+1} = pi_k R_k`` the
    rate matrices ``R_k`` follow from a backward sweep; diagonals of the
    censored generators are rebuilt from off-diagonal row sums so no
    subtractive cancellation occurs. The forward sweep is kept in log scale.
    """
    K = (N + 1 + M - 1) // M - 1  # last level index
    R = np.zeros((K, M, M))
    S = np.zeros((M, M))
    for k in range(K, -1, -1):
        A1 = _block(down, up, N, M, k, k)
        A2 = _block(down, up, N, M, k, k - 1) if k > 0 else np.zeros((M, M))
        if k == K:
            S = A1.copy()
        else:
            S = A1 + R[k] @ _block(down, up, N, M, k + 1, k)
        for a in range(M):
            s = 0.0
            for b in range(M):
                if b != a:
                    s += S[a, b]
                s += A2[a, b]
            S[a, a] = -s
        if k > 0:
            A0 = _block(down, up, N, M, k - 1, k)
            # R_{k-1} = A0 (-S)^{-1}  <=>  (-S)^T R^T = A0^T
            R[k - 1] = np.linalg.solve(-S.T, A0.T).T
    # level 0: pi_0 S = 0 with unit-sum closure
    B = S.T.copy()
    B[M - 1, :] = 1.0
    rhs = np.zeros(M)
    rhs[M - 1] = 1.0
    pi0 = np.linalg.solve(B, rhs)

    logw = np.full(K * M + M, -np.inf)
    v = np.maximum(pi0, 0.0)
    scale = 0.0
    for k in range(K + 1):
        vmax = v.max()
        if vmax <= 0.0:
            break
        v = v / vmax
        scale += np.log(vmax)
        for a in range(M):
            if v[a] > 0.0:
                logw[k * M + a] = np.log(v[a]) + scale
        if k < K:
            v = np.maximum(v @ R[k], 0.0)
    return logw[: N + 1]


def _tail_mass_estimate(log_p: np.ndarray) -> float:
    """Mass beyond the cut, extrapolating the local log-log slope near the top."""
    N = len(log_p) - 1
    lo = max(N // 2, 1)
    if not np.isfinite(log_p[N]):
        return 0.0
    if not np.isfinite(log_p[lo]):
        return 0.0
    slope = (log_p[N] - log_p[lo]) / (math.log(N) - math.log(lo))
    local_nu = -slope
    if local_nu <= 1.0:
        return float("inf")
    return float(math.exp(log_p[N]) * N / (local_nu - 1.0))


def _dense_null_vector(G: np.ndarray) -> np.ndarray:
    ns = scipy.linalg.null_space(G)
    if ns.shape[1] != 1:
        raise ValueError(f"null space has dimension {ns.shape[1]}, steady state not unique")
    v = ns[:, 0]
    v = v / v.sum()
    return np.clip(v, 0.0, None)


def steady_state(params: MBosonParams, truncation: int, method: str = "levels") -> NumberDistribution:
    """Normalized stationary populations on ``0..truncation``.

    ``method="levels"`` (default) runs the O(N M^2) block level reduction and
    never leaves log scale, so cut-off tails far below double-precision range
    are kept. ``method="dense"`` takes the SVD null space of the full
    generator; it exists as an independent check for small truncations.
    """
    _check(params, truncation)
    G = build_generator(params, truncation)
    if method == "levels":
        down, up = _jump_rates(params, truncation)
        logw = _level_reduction(down, up, truncation, params.M)
        if not np.all(np.isfinite(logw) | (logw == -np.inf)):
            raise FloatingPointError("level reduction produced non-finite weights")
    elif method == "dense":
        if truncation > 2000:
            raise ValueError("dense method is limited to truncation <= 2000")
        v = _dense_null_vector(G.toarray())
        with np.errstate(divide="ignore"):
            logw = np.log(v)
    else:
        raise ValueError(f"unknown method {method!r}")

    log_norm = float(logsumexp(logw))
    p = np.exp(logw - log_norm)
    g_norm = float(abs(G).sum(axis=1).max())
    residual = float(np.abs(G @ p).max() / g_norm)
    dist = NumberDistribution(logw, log_norm, truncation, residual=residual)
    dist.tail_mass = _tail_mass_estimate(dist.log_probabilities)
    if dist.tail_flagged:
        dist.warnings.append(
            f"estimated probability mass beyond truncation {truncation} is {dist.tail_mass:.3g}"
        )
    if residual > 1e-10:
        dist.warnings.append(f"steady-state residual {residual:.3g} exceeds 1e-10")
    return dist


# ---------------------------------------------------------------------------
# analytic oracles


def predict_tail(params: MBosonParams) -> TailPrediction:
    if params.M < 2:
        raise ValueError("M = 1 has no power-law regime (thermal distribution)")
    delta = params.delta
    nu = params.nu
    gM, kM = params.gamma[-1], params.kappa[-1]
    if kM == 0.0:
        return TailPrediction(nu=nu, xi=0.0, xi_approx=params.M / delta, delta=delta, has_tail=False)
    if delta == 0.0:
        return TailPrediction(nu=nu, xi=math.inf, xi_approx=math.inf, delta=0.0)
    return TailPrediction(
        nu=nu,
        xi=params.M / math.log(gM / kM),
        xi_approx=params.M / delta,
        delta=delta,
    )


def _require_critical_two_boson(params: MBosonParams):
    if params.M != 2:
        raise ValueError("closed forms are for the two-boson model (M = 2)")
    if not params.is_critical:
        raise ValueError("closed forms hold at the critical point kappa_2 = gamma_2")


def mean_occupation_exact(params: MBosonParams) -> float:
    _require_critical_two_boson(params)
    nu = params.nu
    if nu <= 2:
        raise DivergentMomentError(f"mean occupation diverges for nu = {nu} <= 2")
    c = params.kappa[0] / (4.0 * params.gamma[1])
    return (1.0 + c) / (nu - 2.0)


def second_moment_exact(params: MBosonParams) -> float:
    """Stationary <n^2> from the closed moment equations (needs nu > 3)."""
    _require_critical_two_boson(params)
    nu = params.nu
    if nu <= 3:
        raise DivergentMomentError(f"second moment diverges for nu = {nu} <= 3")
    g1, k1 = params.gamma[0], params.kappa[0]
    g2 = params.gamma[1]
    source = k1 + 8.0 * g2
    drive = g1 + 3.0 * k1 + 16.0 * g2
    return (source + drive * mean_occupation_exact(params)) / (8.0 * g2 * (nu - 3.0))


def moment_recurrence(params: MBosonParams, max_k: int) -> MomentSeries:
    _require_critical_two_boson(params)
    if max_k < 1:
        raise ValueError("max_k must be >= 1")
    nu = params.nu
    c = params.kappa[0] / (4.0 * params.gamma[1])
    values = np.full(max_k + 1, np.inf)
    valid = np.zeros(max_k + 1, dtype=bool)
    values[0] = 1.0
    valid[0] = True
    prev2, prev1 = 0.0, 1.0
    for k in range(1, max_k + 1):
        if nu <= k + 1:
            break
        v = k / (nu - (k + 1)) * ((k + c) * prev1 + ((k - 1) / 2.0) ** 2 * prev2)
        values[k] = v
        valid[k] = True
        prev2, prev1 = prev1, v
    return MomentSeries(values=values, valid=valid, nu=nu)


def g_correlation(params: MBosonParams, k: int) -> float:
    """Steady-state ``g^(k)(0) = <a^+k a^k> / <a^+ a>^k`` from the recurrence."""
    series = moment_recurrence(params, max(k, 1))
    if not series.valid[k]:
        raise DivergentMomentError(f"g^({k})(0) diverges for nu = {series.nu} <= {k + 1}")
    return float(series.values[k] / series.values[1] ** k)


def _double_factorial(n: int) -> int:
    return math.prod(range(n, 0, -2)) if n > 0 else 1


def factorial_moment_asymptotic(nu: float, k: int) -> float:
    """Leading large-``nu`` behaviour of <a^+k a^k> at the critical point (kappa_1 = 0)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    l, odd = divmod(k, 2)
    if not odd:
        return math.factorial(l) * _double_factorial(2 * l - 1) ** 2 / (2.0**l * nu**l)
    return (
        math.factorial(l + 1)
        * _double_factorial(2 * l + 1) ** 2
        * (2 * l + 3)
        / (3.0 * (l + 1) * 2.0**l * nu ** (l + 1))
    )


def g_correlation_asymptotic(nu: float, k: int) -> float:
    """Large-``nu`` asymptote of ``g^(k)(0)``, using <a^+ a> ~ 1/nu."""
    return factorial_moment_asymptotic(nu, k) * nu**k


# ---------------------------------------------------------------------------
# time evolution of the first two moments


def _phi(lam: float, t: float) -> float:
    """``(1 - exp(-lam t)) / lam`` with the ``lam -> 0`` limit ``t``."""
    x = lam * t
    if abs(x) < 1e-12:
        return t * (1.0 - 0.5 * x)
    return -math.expm1(-x) / lam


def _mean_rates(params: MBosonParams):
    _require_critical_two_boson(params)
    g2 = params.gamma[1]
    k1 = params.kappa[0]
    nu = params.nu
    lam1 = 4.0 * (nu - 2.0) * g2
    source = k1 + 4.0 * g2
    return lam1, source


def mean_occupation_time(params: MBosonParams, n0: float, t: float) -> float:
    lam1, source = _mean_rates(params)
    return n0 * math.exp(-lam1 * t) + source * _phi(lam1, t)


def second_moment_time(params: MBosonParams, n0: float, m0: float, t: float) -> float:
    """<n^2(t)> from ``n0 = <n(0)>`` and ``m0 = <n^2(0)>`` at the critical point.

    Solves ``d<n^2>/dt = a + b <n(t)> - lam2 <n^2>`` exactly with the mean
    trajectory substituted; all removable singularities (``lam1 = 0``,
    ``lam2 = 0``, ``lam1 = lam2``) are handled by their limits.
    """
    lam1, source1 = _mean_rates(params)
    g1, k1, g2 = params.gamma[0], params.kappa[0], params.gamma[1]
    lam2 = 8.0 * (params.nu - 3.0) * g2
    a = k1 + 8.0 * g2
    b = g1 + 3.0 * k1 + 16.0 * g2

    i1 = _phi(lam2, t)
    # i2 = int_0^t exp(-lam2 (t - s)) exp(-lam1 s) ds
    dl = lam2 - lam1
    if abs(dl * t) < 1e-10:
        i2 = t * math.exp(-lam2 * t) * (1.0 + 0.5 * dl * t)
    else:
        i2 = (math.exp(-lam1 * t) - math.exp(-lam2 * t)) / dl
    # j = int_0^t exp(-lam2 (t - s)) phi(lam1, s) ds
    if abs(lam1 * t) < 1e-10:
        j = (t - i1) / lam2 if abs(lam2 * t) > 1e-10 else 0.5 * t * t
    else:
        j = (i1 - i2) / lam1
    return m0 * math.exp(-lam2 * t) + a * i1 + b * (n0 * i2 + source1 * j)
