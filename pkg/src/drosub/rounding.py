"""Rounding fractional points of the k-uniform matroid polytope to sets.

``swap_round`` writes ``x`` as a convex combination of bases (size-k sets)
and merges them pairwise with random exchanges, so that every element keeps
its marginal ``P[i in S] = x_i``. ``build_distribution`` repeats it to form an
empirical distribution over sets, whose robust value is then evaluated
exactly over its finite support.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .chi2_core import Chi2Ball, linear_oracle
from .submodular import SampledObjective

ROUND_TOL = 1e-9


@dataclass
class RoundedDistribution:
    subsets: list[tuple[int, ...]]
    weights: np.ndarray
    source_x: np.ndarray | None = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.subsets) != len(self.weights) or len(self.subsets) == 0:
            raise ValueError("need one weight per subset and at least one subset")
        if abs(self.weights.sum() - 1.0) > 1e-9 or np.any(self.weights < 0):
            raise ValueError("weights must form a probability vector")

    @classmethod
    def uniform(cls, subsets, source_x=None) -> "RoundedDistribution":
        subsets = [tuple(sorted(int(i) for i in s)) for s in subsets]
        return cls(subsets, np.full(len(subsets), 1.0 / len(subsets)), source_x)

    def support(self) -> tuple[list[tuple[int, ...]], np.ndarray]:
        """Distinct subsets with their aggregated probabilities (first-seen order)."""
        acc: dict[tuple[int, ...], float] = {}
        for s, w in zip(self.subsets, self.weights):
            acc[s] = acc.get(s, 0.0) + float(w)
        return list(acc), np.array(list(acc.values()))

    def expected_values(self, objective: SampledObjective) -> np.ndarray:
        """``E_{S ~ D}[f_i(S)]`` for every sample ``i``."""
        sets, w = self.support()
        vals = np.stack([objective.values(s) for s in sets], axis=1)
        return vals @ w

    def to_dict(self) -> dict:
        return {
            "subsets": [list(s) for s in self.subsets],
            "weights": self.weights.tolist(),
            "source_x": None if self.source_x is None else np.asarray(self.source_x).tolist(),
        }


def _padded(x, k: int) -> tuple[np.ndarray, int]:
    """Append dummy coordinates so the entries sum to exactly ``k``."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or np.any(x < -ROUND_TOL) or np.any(x > 1 + ROUND_TOL):
        raise ValueError("x must lie in the unit cube")
    if k < 0 or k > len(x):
        raise ValueError(f"k = {k} outside [0, {len(x)}]")
    x = np.clip(x, 0.0, 1.0)
    total = float(x.sum())
    if total > k + ROUND_TOL:
        raise ValueError(f"sum(x) = {total} exceeds k = {k}")
    slack = k - total
    if slack <= ROUND_TOL:
        return x, len(x)
    pieces = math.ceil(slack - ROUND_TOL)
    dummies = np.full(pieces, slack / pieces)
    return np.concatenate([x, dummies]), len(x)


def basis_decomposition(x, k: int) -> list[tuple[float, np.ndarray]]:
    """Write ``x`` (entries in [0, 1], summing to ``k``) as ``sum_j w_j 1_{B_j}``.

    Greedy: take the k largest remaining coordinates and remove as much
    weight as keeps the remainder inside the scaled polytope.
    """
    y = np.array(x, dtype=float)
    remaining = 1.0
    parts = []
    while remaining > ROUND_TOL:
        order = np.argsort(-y, kind="stable")
        top, rest = order[:k], order[k:]
        step = y[top].min() if k else remaining
        if len(rest):
            step = min(step, remaining - y[rest].max())
        step = min(max(step, 0.0), remaining)
        if step <= ROUND_TOL:
            # numerical residue only; give what is left to the current top set
            step = remaining
        parts.append((step, np.sort(top)))
        y[top] -= step
        remaining -= step
    total = sum(w for w, _ in parts)
    return [(w / total, B) for w, B in parts]


def _merge(a: set, wa: float, b: set, wb: float, rng: np.random.Generator) -> set:
    a, b = set(a), set(b)
    while a != b:
        i = min(a - b)
        j = min(b - a)
        if rng.random() < wa / (wa + wb):
            b.remove(j)
            b.add(i)
        else:
            a.remove(i)
            a.add(j)
    return a


def _swap_round_decomposed(parts, k: int, rng: np.random.Generator) -> set:
    current = set(parts[0][1].tolist())
    weight = parts[0][0]
    for w, B in parts[1:]:
        current = _merge(current, weight, set(B.tolist()), w, rng)
        weight += w
    return current


def swap_round(x, k: int, rng: np.random.Generator) -> tuple[int, ...]:
    """Randomized swap rounding of ``x`` to a set of size ``k``.

    If ``sum(x) < k`` the vector is padded with dummy elements, which are
    dropped afterwards, so the set has size at most ``k``.
    """
    xp, real = _padded(x, k)
    if k == 0:
        return ()
    parts = basis_decomposition(xp, k)
    S = _swap_round_decomposed(parts, k, rng)
    return tuple(sorted(i for i in S if i < real))


def build_distribution(x, k: int, count: int, rng: np.random.Generator) -> RoundedDistribution:
    """Empirical distribution of ``count`` independent swap roundings of ``x``."""
    if count < 1:
        raise ValueError("count must be at least 1")
    xp, real = _padded(x, k)
    if k == 0:
        return RoundedDistribution.uniform([()] * count, source_x=np.asarray(x, dtype=float))
    parts = basis_decomposition(xp, k)
    sets = []
    for _ in range(count):
        S = _swap_round_decomposed(parts, k, rng)
        sets.append(tuple(sorted(i for i in S if i < real)))
    return RoundedDistribution.uniform(sets, source_x=np.asarray(x, dtype=float))


def default_round_count(n: int, eps: float = 0.1, delta: float = 0.05) -> int:
    """``ceil(log(n / delta) / eps^3)`` roundings for an eps-accurate distribution."""
    return math.ceil(math.log(n / delta) / eps**3)


def robust_set_value(dist: RoundedDistribution, objective: SampledObjective, ball: Chi2Ball) -> float:
    """``min_p sum_i p_i E_{S ~ D}[f_i(S)]`` computed over the exact support of ``D``."""
    return linear_oracle(dist.expected_values(objective), ball).value
