"""Geometry of the chi-square uncertainty ball around an empirical distribution.

The ball is

    P_{rho,n} = {p in simplex_n : 0.5 * ||n p - 1||^2 <= rho}

and this module provides exact linear minimization over it, Euclidean
projection onto it, the variance-expansion diagnostics that relate the robust
value to a variance-regularized mean, and the tail-bound / smoothness
constants used elsewhere in the package.

Variances are always the biased (divide-by-count) sample variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Tolerances:
    """Numerical tolerances used by the ball routines."""

    kkt: float = 1e-8
    equivalence: float = 1e-10
    simplex: float = 1e-12
    alpha_slack: float = 1e-15
    value_tie: float = 1e-12
    # largest |sum(p) - 1| silently renormalized before it is treated as a bug
    max_drift: float = 1e-9


DEFAULT_TOLERANCES = Tolerances()


@dataclass(frozen=True)
class Chi2Ball:
    rho: float
    n: int

    def __post_init__(self):
        if not math.isfinite(self.rho) or self.rho < 0:
            raise ValueError(f"rho must be a finite nonnegative number, got {self.rho}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")

    def divergence(self, p) -> float:
        """0.5 * ||n p - 1||^2."""
        p = np.asarray(p, dtype=float)
        return 0.5 * float(np.sum((self.n * p - 1.0) ** 2))

    def contains(self, p, tol: float = DEFAULT_TOLERANCES.simplex) -> bool:
        p = np.asarray(p, dtype=float)
        if p.shape != (self.n,) or not np.all(np.isfinite(p)):
            return False
        if np.any(p < -tol) or abs(p.sum() - 1.0) > tol:
            return False
        return self.divergence(p) <= self.rho + tol

    def uniform(self) -> np.ndarray:
        return np.full(self.n, 1.0 / self.n)


@dataclass(frozen=True)
class SortedSample:
    """A value vector with its sort order and prefix statistics.

    ``order[j]`` is the original index of the j-th sorted value; the prefix
    arrays are indexed by ``j = 0..n-1`` and describe the first ``j + 1``
    sorted values.
    """

    values: np.ndarray
    order: np.ndarray
    prefix_mean: np.ndarray
    prefix_sumsq: np.ndarray
    prefix_var: np.ndarray
    descending: bool = False

    @classmethod
    def from_values(cls, values, descending: bool = False) -> "SortedSample":
        values = np.asarray(values, dtype=float)
        key = -values if descending else values
        order = np.argsort(key, kind="stable")
        s = values[order]
        counts = np.arange(1, len(s) + 1, dtype=float)
        prefix_mean = np.cumsum(s) / counts
        prefix_sumsq = np.cumsum(s * s)
        # shift before squaring; the variance is shift-invariant and this
        # avoids the worst of the b_j/j - mean^2 cancellation
        c = s - s[0]
        cm = np.cumsum(c) / counts
        prefix_var = np.maximum(np.cumsum(c * c) / counts - cm * cm, 0.0)
        return cls(values, order, prefix_mean, prefix_sumsq, prefix_var, descending)

    @property
    def sorted_values(self) -> np.ndarray:
        return self.values[self.order]


@dataclass(frozen=True)
class OracleSolution:
    p: np.ndarray
    support_m: int
    lam: float
    theta: float
    value: float
    tight: bool

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "p": [float(v) for v in self.p],
            "m": self.support_m,
            "lambda": self.lam if math.isfinite(self.lam) else None,
            "theta": self.theta,
            "tight": self.tight,
        }


@dataclass(frozen=True)
class VarianceExpansion:
    empirical_mean: float
    robust_value: float
    lower_gap: float
    upper_gap: float
    exact: bool


@dataclass(frozen=True)
class BernsteinConstants:
    delta: float
    B: float
    c1: float
    c2: float


def _check_vector(z, ball: Chi2Ball) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.ndim != 1 or len(z) == 0:
        raise ValueError("expected a nonempty 1-d vector")
    if not np.all(np.isfinite(z)):
        raise ValueError("vector contains non-finite entries")
    if len(z) != ball.n:
        raise ValueError(f"vector has length {len(z)} but the ball has n = {ball.n}")
    return z


def alpha(m, ball: Chi2Ball):
    """2 rho m / n^2 + m / n - 1; accepts an integer or an integer array."""
    m_arr = np.asarray(m)
    if np.any(m_arr < 1) or np.any(m_arr > ball.n):
        raise ValueError(f"m must lie in [1, {ball.n}]")
    n = ball.n
    out = 2.0 * ball.rho * m_arr / n**2 + m_arr / n - 1.0
    return float(out) if np.ndim(out) == 0 else out


def _renormalize(p: np.ndarray, tol: Tolerances) -> np.ndarray:
    p = np.where(p < 1e-15, 0.0, p)
    drift = abs(p.sum() - 1.0)
    if drift > tol.max_drift:
        raise RuntimeError(f"internal error: simplex drift {drift:.3e}")
    return p / p.sum()


def linear_oracle(z, ball: Chi2Ball, tol: Tolerances = DEFAULT_TOLERANCES) -> OracleSolution:
    """Exact minimizer of <z, p> over the chi-square ball.

    Runs in O(n log n): a sort, O(n) prefix statistics and a vectorized scan
    over the candidate support sizes m. Among candidates whose objective ties
    within ``tol.value_tie`` the smallest m is returned, which selects the
    unique minimum-cardinality optimum.
    """
    z = _check_vector(z, ball)
    n, rho = ball.n, ball.rho
    ss = SortedSample.from_values(z)
    zs = ss.sorted_values

    # size of the group attaining the minimum value
    k = int(np.searchsorted(zs, zs[0], side="right"))
    if rho >= n * (n - k) / (2.0 * k):
        p = np.zeros(n)
        p[ss.order[:k]] = 1.0 / k
        return OracleSolution(p, k, 0.0, -float(zs[0]), float(zs[0]), False)

    m = np.arange(1, n + 1)
    al = alpha(m, ball)
    cand = al > tol.alpha_slack
    if not np.any(cand):
        # the ball has collapsed (numerically) onto the uniform distribution
        mean = float(ss.prefix_mean[-1])
        return OracleSolution(ball.uniform(), n, math.inf, -mean, float(z.mean()), True)

    mc = m[cand].astype(float)
    zbar = ss.prefix_mean[cand]
    var = ss.prefix_var[cand]
    # Lam = lambda * n^2
    lam_sqrt = np.sqrt(mc**2 * var / al[cand])
    lam_nonneg = mc * (zs[cand] - zbar)
    Lam = np.maximum(lam_sqrt, lam_nonneg)
    with np.errstate(divide="ignore", invalid="ignore"):
        shrink = np.where(Lam > 0, mc * var / Lam, 0.0)
    v = zbar - shrink

    best = v.min()
    j = int(np.flatnonzero(v <= best + tol.value_tie * max(1.0, abs(best)))[0])
    m_opt = int(mc[j])
    Lam_opt = float(Lam[j])
    zbar_opt = float(zbar[j])

    p_sorted = np.zeros(n)
    if Lam_opt > 0:
        p_sorted[:m_opt] = 1.0 / m_opt - (zs[:m_opt] - zbar_opt) / Lam_opt
    else:
        p_sorted[:m_opt] = 1.0 / m_opt
    p_sorted = _renormalize(np.maximum(p_sorted, 0.0), tol)
    p = np.empty(n)
    p[ss.order] = p_sorted

    lam = Lam_opt / n**2
    theta = (1.0 - n / m_opt) * lam * n - zbar_opt
    support = int(np.count_nonzero(p > 0))
    return OracleSolution(p, support, lam, theta, float(z @ p), True)


def kkt_residual(z, sol: OracleSolution, ball: Chi2Ball) -> float:
    """Norm of the stationarity residual of the oracle's Lagrangian.

    The multiplier of the nonnegativity constraints is recovered from the
    stationarity equation on the coordinates where p is zero; negative
    recovered multipliers count towards the residual.
    """
    z = np.asarray(z, dtype=float)
    n = ball.n
    if not math.isfinite(sol.lam):
        return 0.0 if np.allclose(sol.p, 1.0 / n, atol=1e-12) else math.inf
    g = z + sol.lam * n * (n * sol.p - 1.0) + sol.theta
    on = sol.p > 0
    r_on = g[on]
    r_off = np.minimum(g[~on], 0.0)
    return float(math.sqrt(np.sum(r_on**2) + np.sum(r_off**2)))


def project(w, ball: Chi2Ball, tol: Tolerances = DEFAULT_TOLERANCES) -> np.ndarray:
    """Euclidean projection of ``w`` onto the chi-square ball.

    Sorts descending and, for each support size m, builds the candidate
    ``p_i = (w_i - mean_m) * beta + 1/m`` on the top-m coordinates with the
    largest feasible ``beta``. ``beta = 1 / (1 + lambda n^2)`` so it is also
    capped at 1, which covers the case where the ball constraint is slack.
    Every candidate is feasible, so the one closest to ``w`` is the
    projection. Entries of ``w`` may be negative.
    """
    w = _check_vector(w, ball)
    if ball.contains(w, tol.simplex):
        return w.copy()
    n = ball.n
    ss = SortedSample.from_values(w, descending=True)
    ws = ss.sorted_values
    m = np.arange(1, n + 1)
    al = alpha(m, ball)
    cand = al >= -tol.alpha_slack
    mc = m[cand].astype(float)
    al_c = np.maximum(al[cand], 0.0)
    wbar = ss.prefix_mean[cand]
    var = ss.prefix_var[cand]
    with np.errstate(divide="ignore", invalid="ignore"):
        beta_ball = np.where(var > 0, np.sqrt(al_c) / (mc * np.sqrt(var)), np.inf)
        gap = wbar - ws[cand]
        beta_nonneg = np.where(gap > 0, 1.0 / (mc * gap), np.inf)
    beta = np.minimum(np.minimum(beta_ball, beta_nonneg), 1.0)

    # exact 0.5 * ||p - w||^2 for each candidate
    total_sq = float(np.sum(ws * ws))
    tail_sq = total_sq - ss.prefix_sumsq[cand]
    obj = 0.5 * ((beta - 1.0) ** 2 * mc * var + mc * (1.0 / mc - wbar) ** 2 + tail_sq)
    best = obj.min()
    j = int(np.flatnonzero(obj <= best + tol.value_tie * max(1.0, abs(best)))[0])
    m_opt = int(mc[j])
    p_sorted = np.zeros(n)
    p_sorted[:m_opt] = (ws[:m_opt] - wbar[j]) * beta[j] + 1.0 / m_opt
    p_sorted = _renormalize(np.maximum(p_sorted, 0.0), tol)
    p = np.empty(n)
    p[ss.order] = p_sorted
    return p


def variance_expansion(z, ball: Chi2Ball, B: float) -> VarianceExpansion:
    """Compare the robust value of ``z`` with its variance-regularized mean.

    ``lower_gap <= mean - robust <= upper_gap`` always holds; ``exact`` flags
    the high-variance regime in which ``robust == mean - upper_gap``.
    """
    z = _check_vector(z, ball)
    if np.any(z < 0) or np.any(z > B):
        raise ValueError(f"values must lie in [0, B] = [0, {B}]")
    n, rho = ball.n, ball.rho
    mean = float(z.mean())
    var = float(np.mean((z - mean) ** 2))
    robust = linear_oracle(z, ball).value
    upper = math.sqrt(2.0 * rho * var / n)
    lower = max(upper - 2.0 * B * rho / n, 0.0)
    exact = var >= 2.0 * rho * (float(z.max()) - mean) ** 2 / n
    return VarianceExpansion(mean, robust, lower, upper, exact)


def closed_form_value(z, ball: Chi2Ball) -> float:
    """Closed-form robust value for distinct-valued ``z``.

    min over m with alpha(m) > 0 of
    ``mean_m - min(sqrt(alpha(m) var_m), var_m / (z_(m) - mean_m))``
    where the statistics are over the m smallest values.
    """
    z = _check_vector(z, ball)
    n, rho = ball.n, ball.rho
    if len(np.unique(z)) != n:
        raise ValueError("values must be pairwise distinct")
    if rho >= n * (n - 1) / 2.0:
        raise ValueError(f"rho must be below n(n-1)/2 = {n * (n - 1) / 2.0}")
    zs = np.sort(z)
    best = math.inf
    for m in range(1, n + 1):
        a = alpha(m, ball)
        if a <= 0:
            continue
        head = zs[:m]
        mu = head.mean()
        var = float(np.mean((head - mu) ** 2))
        spread = zs[m - 1] - mu
        second = var / spread if spread > 0 else math.inf
        best = min(best, mu - min(math.sqrt(a * var), second))
    return float(best)


def bernstein_constants(delta: float, B: float) -> BernsteinConstants:
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if not B > 0:
        raise ValueError("B must be positive")
    log_inv = math.log(1.0 / delta)
    return BernsteinConstants(delta, B, math.sqrt(2.0 * log_inv), 2.0 * B / 3.0 * log_inv)


def variance_regularized_value(z, c1: float) -> float:
    """mean(z) - c1 * sqrt(var(z) / n) with the biased variance."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 1 or len(z) == 0 or not np.all(np.isfinite(z)):
        raise ValueError("expected a nonempty finite 1-d vector")
    mean = float(z.mean())
    var = float(np.mean((z - mean) ** 2))
    return mean - c1 * math.sqrt(var / len(z))


def high_variance_threshold(ball: Chi2Ball, B: float, delta: float, V: int, k: int) -> float:
    """Population-variance level above which DRO and variance regularization
    coincide for all sets of size at most ``k`` (with probability 1 - delta)."""
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if V < 1 or k < 1:
        raise ValueError("V and k must be at least 1")
    if B < 0:
        raise ValueError("B must be nonnegative")
    M = max(
        math.sqrt(32.0 * ball.rho / 7.0),
        math.sqrt(36.0 * (math.log(1.0 / delta) + V * math.log(25.0 * k))),
    )
    return B / math.sqrt(ball.n) * M


def smoothness_constants(ball: Chi2Ball, B: float, b: float, V: int, L_F: float) -> tuple[float, float]:
    """Gradient-Lipschitz constants of h(z) = min_p <z, p> and of G = h(F(x)).

    Both hold on the high sample-variance region var(z) >= 2 rho B^2 / n.
    """
    if B <= 0:
        raise ValueError("B must be positive")
    if b < 0 or L_F < 0 or V < 1:
        raise ValueError("b and L_F must be nonnegative and V at least 1")
    n, rho = ball.n, ball.rho
    L = 2.0 * math.sqrt(2.0 * rho) / n**1.5 + 2.0 / (B * n)
    L_G = L_F + 2.0 * b * math.sqrt(2.0 * rho * V) / n + 2.0 * b * math.sqrt(V) / (B * math.sqrt(n))
    return L, L_G


def robust_value_of(z, ball: Chi2Ball) -> float:
    """Shorthand for ``linear_oracle(z, ball).value``."""
    return linear_oracle(z, ball).value


__all__ = [
    "Tolerances",
    "DEFAULT_TOLERANCES",
    "Chi2Ball",
    "SortedSample",
    "OracleSolution",
    "VarianceExpansion",
    "BernsteinConstants",
    "alpha",
    "linear_oracle",
    "kkt_residual",
    "project",
    "variance_expansion",
    "closed_form_value",
    "bernstein_constants",
    "variance_regularized_value",
    "high_variance_threshold",
    "smoothness_constants",
    "robust_value_of",
]
