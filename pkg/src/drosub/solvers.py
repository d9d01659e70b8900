"""Continuous solvers for the robust problem over the k-uniform matroid polytope.

All Frank-Wolfe variants share one loop:

1. evaluate ``F_i(x)`` for every sample and compute the exact worst-case
   ``p`` with :func:`chi2_core.linear_oracle`;
2. draw ``c`` sample indices uniformly with replacement and form the
   unbiased estimate ``(n / c) * sum_l p_{i_l} grad F_{i_l}(x)``;
3. mix it into the direction (momentum for MFW, none for plain FW);
4. step ``x <- x + v / T`` towards the top-k vertex ``v``.

The smoothed variant evaluates the oracle and gradients at uniformly
perturbed points. The OGD baseline instead runs projected gradient descent on
``p`` against greedy best responses.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .chi2_core import Chi2Ball, linear_oracle, project
from .rounding import RoundedDistribution
from .submodular import SampledObjective, grad_samples, lazy_greedy, multilinear_sampled


def power_schedule(t: int) -> float:
    return 4.0 / (t + 8) ** (2.0 / 3.0)


def resolve_schedule(schedule) -> Callable[[int], float]:
    """Accepts a callable, a constant step in (0, 1], or a schedule name."""
    if callable(schedule):
        return schedule
    if schedule in (None, "power", "default"):
        return power_schedule
    if schedule == "one":
        return lambda t: 1.0
    value = float(schedule)
    if not 0.0 < value <= 1.0:
        raise ValueError("constant step must lie in (0, 1]")
    return lambda t: value


@dataclass
class MFWConfig:
    T: int = 100
    batch_c: int = 1
    k: int = 1
    seed: int = 0
    step_schedule: str | float = "power"
    # draws of S ~ x per stochastic gradient; "exact" uses the closed form instead
    grad_samples: int = 1
    gradient: str = "sampled"
    value_mode: str = "exact"
    value_samples: int = 200

    def validate(self, objective: SampledObjective):
        if self.T < 1:
            raise ValueError("T must be at least 1")
        if not 1 <= self.batch_c <= objective.n:
            raise ValueError(f"batch size must lie in [1, n = {objective.n}]")
        if not 0 <= self.k <= objective.size:
            raise ValueError(f"k must lie in [0, |V| = {objective.size}]")
        if self.gradient not in ("sampled", "exact"):
            raise ValueError(f"unknown gradient mode {self.gradient!r}")
        if self.value_mode not in ("exact", "sampled"):
            raise ValueError(f"unknown value mode {self.value_mode!r}")
        if self.grad_samples < 1:
            raise ValueError("grad_samples must be at least 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        if callable(self.step_schedule):
            d["step_schedule"] = getattr(self.step_schedule, "__name__", "custom")
        return d


@dataclass
class SolverRun:
    alg: str
    x_final: np.ndarray
    values: np.ndarray
    d_norms: np.ndarray
    p_history: np.ndarray
    wall_time: float
    iterations: int
    config: dict = field(default_factory=dict)

    def to_dict(self, include_time: bool = False) -> dict:
        out = {
            "alg": self.alg,
            "config": self.config,
            "iterations": self.iterations,
            "x_final": self.x_final.tolist(),
            "trajectory": {
                "robust_value": self.values.tolist(),
                "d_norm": self.d_norms.tolist(),
                "p": self.p_history.tolist(),
            },
        }
        if include_time:
            out["wall_time"] = self.wall_time
        return out


@dataclass
class OGDRun:
    distribution: RoundedDistribution
    values: np.ndarray
    p_history: np.ndarray
    wall_time: float
    iterations: int
    config: dict = field(default_factory=dict)

    def to_dict(self, include_time: bool = False) -> dict:
        out = {
            "alg": "ogd",
            "config": self.config,
            "iterations": self.iterations,
            "subsets": [list(map(int, s)) for s in self.distribution.subsets],
            "weights": self.distribution.weights.tolist(),
            "trajectory": {"value": self.values.tolist(), "p": self.p_history.tolist()},
        }
        if include_time:
            out["wall_time"] = self.wall_time
        return out


def lmo_topk(d, k: int) -> np.ndarray:
    """Indicator of the ``k`` largest entries of ``d``; ties go to the lowest index."""
    d = np.asarray(d, dtype=float)
    if k > len(d) or k < 0:
        raise ValueError(f"k = {k} outside [0, {len(d)}]")
    v = np.zeros(len(d))
    v[np.argsort(-d, kind="stable")[:k]] = 1.0
    return v


def momentum_weights(steps) -> np.ndarray:
    """Weight of each past gradient in ``d^(t)`` after the given step sizes.

    With ``d^(0) = 0`` the weight of gradient ``s`` is
    ``rho_s * prod_{r > s} (1 - rho_r)``.
    """
    steps = np.asarray(steps, dtype=float)
    w = np.empty(len(steps))
    tail = 1.0
    for s in range(len(steps) - 1, -1, -1):
        w[s] = steps[s] * tail
        tail *= 1.0 - steps[s]
    return w


class _Streams:
    def __init__(self, seed: int):
        batch, grad, smooth, value = np.random.SeedSequence(seed).spawn(4)
        self.batch = np.random.default_rng(batch)
        self.grad = np.random.default_rng(grad)
        self.smooth = np.random.default_rng(smooth)
        self.value = np.random.default_rng(value)


def _values(objective, x, cfg: MFWConfig, streams: _Streams) -> np.ndarray:
    if cfg.value_mode == "exact":
        return objective.multilinear(x)
    return multilinear_sampled(objective, x, streams.value, cfg.value_samples)


def _batch_gradient(objective, x, p, idx, cfg: MFWConfig, streams: _Streams) -> np.ndarray:
    n, c = objective.n, len(idx)
    if cfg.gradient == "exact":
        grads = objective.gradient(x, idx)
    else:
        grads = np.stack([grad_samples(objective, i, x, streams.grad, cfg.grad_samples).mean(axis=0) for i in idx])
    g = (n / c) * (p[idx] @ grads)
    if not np.all(np.isfinite(g)):
        raise FloatingPointError(f"non-finite gradient estimate at indices {idx.tolist()}")
    return g


def _frank_wolfe(objective: SampledObjective, ball: Chi2Ball, cfg: MFWConfig, alg: str,
                 momentum: bool, smoothing: tuple[float, int] | None = None) -> SolverRun:
    cfg.validate(objective)
    if ball.n != objective.n:
        raise ValueError("ball size does not match the number of samples")
    schedule = resolve_schedule(cfg.step_schedule)
    streams = _Streams(cfg.seed)
    n, V, T = objective.n, objective.size, cfg.T

    start = time.perf_counter()
    x = np.zeros(V)
    d = np.zeros(V)
    F = _values(objective, x, cfg, streams)
    values = np.empty(T)
    d_norms = np.empty(T)
    p_hist = np.empty((T, n))
    for t in range(1, T + 1):
        p = linear_oracle(F, ball).p
        idx = streams.batch.integers(0, n, size=cfg.batch_c)
        if smoothing is None:
            g = _batch_gradient(objective, x, p, idx, cfg, streams)
        else:
            u, reps = smoothing
            g = np.zeros(V)
            for _ in range(reps):
                xp = np.clip(x + streams.smooth.uniform(-u, u, size=V), 0.0, 1.0)
                pp = linear_oracle(_values(objective, xp, cfg, streams), ball).p
                g += _batch_gradient(objective, xp, pp, idx, cfg, streams)
            g /= reps
        if momentum:
            step = schedule(t)
            d = (1.0 - step) * d + step * g
        else:
            d = g
        v = lmo_topk(d, cfg.k)
        x = np.minimum(x + v / T, 1.0)
        F = _values(objective, x, cfg, streams)
        values[t - 1] = linear_oracle(F, ball).value
        d_norms[t - 1] = float(np.linalg.norm(d))
        p_hist[t - 1] = p
    if smoothing is not None:
        x = np.clip(x - smoothing[0], 0.0, 1.0)
    wall = time.perf_counter() - start
    config = cfg.to_dict()
    config["rho"] = ball.rho
    if smoothing is not None:
        config["u"], config["smoothing_samples"] = smoothing
    return SolverRun(alg, x, values, d_norms, p_hist, wall, T, config)


def mfw(objective: SampledObjective, ball: Chi2Ball, cfg: MFWConfig) -> SolverRun:
    """Momentum Frank-Wolfe on ``G(x) = min_p sum_i p_i F_i(x)``."""
    return _frank_wolfe(objective, ball, cfg, "mfw", momentum=True)


def fw_plain(objective: SampledObjective, ball: Chi2Ball, cfg: MFWConfig) -> SolverRun:
    """Stochastic Frank-Wolfe without momentum: the direction is the latest estimate."""
    return _frank_wolfe(objective, ball, cfg, "fw", momentum=False)


def fw_smoothed(objective: SampledObjective, ball: Chi2Ball, cfg: MFWConfig,
                u: float = 0.05, smoothing_samples: int = 10) -> SolverRun:
    """Momentum Frank-Wolfe on the randomized-smoothing surrogate of ``G``.

    Each gradient query averages ``smoothing_samples`` evaluations at
    ``clip(x + z)`` with ``z ~ U[-u, u]^|V|``; the returned point is shifted
    down by ``u`` in every coordinate and clipped to the unit cube.
    """
    if not u > 0:
        raise ValueError("smoothing radius must be positive")
    if smoothing_samples < 1:
        raise ValueError("smoothing_samples must be at least 1")
    return _frank_wolfe(objective, ball, cfg, "equator", momentum=True,
                        smoothing=(float(u), int(smoothing_samples)))


def default_eta(ball: Chi2Ball, B: float) -> Callable[[int], float]:
    """Step size ``D / (G sqrt(t))`` from the ball diameter and gradient bound."""
    D = 2.0 * math.sqrt(2.0 * ball.rho) / ball.n
    G = B * math.sqrt(ball.n)
    return lambda t: D / (G * math.sqrt(t))


def ogd_best_response(objective: SampledObjective, ball: Chi2Ball, T: int,
                      eta_schedule: Callable[[int], float] | None = None, k: int = 1) -> OGDRun:
    """No-regret baseline: projected OGD for the adversary, greedy for the maximizer.

    Returns the uniform distribution over the ``T`` best responses together
    with the adversary's trajectory.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    if ball.n != objective.n:
        raise ValueError("ball size does not match the number of samples")
    eta = eta_schedule or default_eta(ball, objective.B if objective.B > 0 else 1.0)
    start = time.perf_counter()
    p = ball.uniform()
    sets = []
    values = np.empty(T)
    p_hist = np.empty((T, objective.n))
    for t in range(1, T + 1):
        S, _ = lazy_greedy(objective, p, k)
        z = objective.values(S)
        p_hist[t - 1] = p
        values[t - 1] = float(p @ z)
        sets.append(tuple(S))
        p = project(p - eta(t) * z, ball)
    wall = time.perf_counter() - start
    dist = RoundedDistribution.uniform(sets, source_x=None)
    return OGDRun(dist, values, p_hist, wall, T, {"T": T, "k": k, "rho": ball.rho})
