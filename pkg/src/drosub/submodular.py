"""Sampled monotone submodular objectives and their multilinear extensions.

Two families are supported, both given as a fixed list of ``n`` sampled
functions over a ground set ``V = {0, ..., |V|-1}``:

* facility location, ``f_i(S) = max_{j in S} r^i_j`` (0 on the empty set);
* influence under live-edge graphs, ``f_i(S)`` = number of nodes reachable
  from ``S`` along the active edges of sample ``i``.

Each family has a closed-form multilinear extension and gradient, which the
solvers use. :func:`multilinear_exact` is the brute-force definition (sum over
all subsets) and serves as the reference the closed forms are checked
against.
"""

from __future__ import annotations

import heapq
import re
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .chi2_core import Chi2Ball, linear_oracle

MAX_EXACT_GROUND_SET = 20


@dataclass(frozen=True)
class GroundSet:
    size: int

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("ground set must have at least one element")

    def __iter__(self):
        return iter(range(self.size))


@dataclass
class FacilitySample:
    rewards: np.ndarray

    def __post_init__(self):
        self.rewards = np.asarray(self.rewards, dtype=float)
        if self.rewards.ndim != 1 or np.any(self.rewards < 0) or not np.all(np.isfinite(self.rewards)):
            raise ValueError("rewards must be a finite nonnegative vector")

    def __call__(self, S: Iterable[int]) -> float:
        S = list(S)
        return float(self.rewards[S].max()) if S else 0.0


@dataclass
class LiveEdgeSample:
    """One realized live-edge graph; edges are directed ``(u, v)`` pairs."""

    nodes: int
    active_edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=int))
    regime: int | None = None

    def __post_init__(self):
        e = np.asarray(self.active_edges, dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= self.nodes):
            raise ValueError("edge endpoint outside node range")
        self.active_edges = e
        self._adj = None

    @property
    def adjacency(self) -> list[list[int]]:
        if self._adj is None:
            adj: list[list[int]] = [[] for _ in range(self.nodes)]
            for u, v in self.active_edges:
                adj[u].append(int(v))
            self._adj = adj
        return self._adj

    def reachable(self, S: Iterable[int]) -> set[int]:
        """Breadth-first search from every seed in ``S``."""
        adj = self.adjacency
        seen = set(int(s) for s in S)
        queue = deque(seen)
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        return seen

    def __call__(self, S: Iterable[int]) -> float:
        return float(len(self.reachable(S)))

    def reach_matrix(self) -> np.ndarray:
        """Boolean ``R[v, u]``: node ``u`` is reachable from ``v``.

        Transitive closure by repeated squaring of (I + A).
        """
        N = self.nodes
        M = np.eye(N, dtype=np.float32)
        if len(self.active_edges):
            M[self.active_edges[:, 0], self.active_edges[:, 1]] = 1.0
        while True:
            M2 = ((M @ M) > 0).astype(np.float32)
            if np.array_equal(M2, M):
                return M.astype(bool)
            M = M2


class SampledObjective:
    """A fixed list of ``n`` sampled submodular functions on a common ground set.

    Subclasses provide vectorized evaluation over all samples. ``B`` bounds
    every ``f_i(S)`` and ``b`` is the largest singleton value.
    """

    kind = "abstract"
    n: int
    size: int
    B: float
    b: float

    @property
    def ground_set(self) -> GroundSet:
        return GroundSet(self.size)

    def _check_index(self, i):
        if not 0 <= i < self.n:
            raise IndexError(f"sample index {i} out of range for n = {self.n}")

    def _check_set(self, S) -> list[int]:
        S = sorted(set(int(s) for s in S))
        if S and (S[0] < 0 or S[-1] >= self.size):
            raise ValueError("subset contains elements outside the ground set")
        return S

    # vectorized evaluation ------------------------------------------------
    def values(self, S) -> np.ndarray:
        """``(f_1(S), ..., f_n(S))``."""
        raise NotImplementedError

    def values_of_masks(self, i: int, masks: np.ndarray) -> np.ndarray:
        """``f_i`` on each row of a boolean ``(count, |V|)`` membership matrix."""
        raise NotImplementedError

    def multilinear(self, x) -> np.ndarray:
        """Closed-form ``(F_1(x), ..., F_n(x))``."""
        raise NotImplementedError

    def gradient(self, x, idx=None) -> np.ndarray:
        """Exact ``grad F_i(x)`` for each ``i`` in ``idx``; shape ``(len(idx), |V|)``."""
        raise NotImplementedError

    def gains_of_masks(self, i: int, masks: np.ndarray) -> np.ndarray:
        """``f_i(S + j) - f_i(S - j)`` for every row ``S`` and every ``j``."""
        raise NotImplementedError

    # greedy support ----------------------------------------------------------
    def _greedy_state(self):
        raise NotImplementedError

    def _greedy_gain(self, state, j: int) -> np.ndarray:
        raise NotImplementedError

    def _greedy_add(self, state, j: int):
        raise NotImplementedError


class FacilityObjective(SampledObjective):
    """Facility location samples; row ``i`` of ``rewards`` is ``r^i``."""

    kind = "facility"

    def __init__(self, rewards, B: float | None = None):
        R = np.asarray(rewards, dtype=float)
        if R.ndim != 2 or R.shape[0] < 1 or R.shape[1] < 1:
            raise ValueError("rewards must be a nonempty (n, |V|) matrix")
        if not np.all(np.isfinite(R)) or np.any(R < 0):
            raise ValueError("rewards must be finite and nonnegative")
        self.rewards = R
        self.n, self.size = R.shape
        self.B = float(R.max()) if B is None else float(B)
        self.b = float(R.max())
        if self.B < self.b:
            raise ValueError(f"declared bound B = {self.B} is below the largest reward {self.b}")
        # descending reward order per sample, for the closed-form extension
        self._order = np.argsort(-R, axis=1, kind="stable")
        self._sorted = np.take_along_axis(R, self._order, axis=1)

    @classmethod
    def from_samples(cls, samples: Sequence[FacilitySample], B: float | None = None):
        return cls(np.stack([s.rewards for s in samples]), B=B)

    def sample(self, i: int) -> FacilitySample:
        self._check_index(i)
        return FacilitySample(self.rewards[i])

    def values(self, S) -> np.ndarray:
        S = self._check_set(S)
        if not S:
            return np.zeros(self.n)
        return self.rewards[:, S].max(axis=1)

    def values_of_masks(self, i, masks):
        masks = np.asarray(masks, dtype=bool)
        return np.where(masks, self.rewards[i], 0.0).max(axis=1)

    def multilinear(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        xs = x[self._order]
        survive = np.cumprod(1.0 - xs, axis=1)
        before = np.hstack([np.ones((self.n, 1)), survive[:, :-1]])
        return np.sum(self._sorted * xs * before, axis=1)

    def gradient(self, x, idx=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        idx = np.arange(self.n) if idx is None else np.asarray(idx, dtype=int)
        order = self._order[idx]
        r = self._sorted[idx]
        xs = x[order]
        V = self.size
        # tail[q] = E[max over positions after q] when nothing at or before q is picked
        tail = np.zeros_like(r)
        for q in range(V - 2, -1, -1):
            tail[:, q] = r[:, q + 1] * xs[:, q + 1] + (1.0 - xs[:, q + 1]) * tail[:, q + 1]
        survive = np.cumprod(1.0 - xs, axis=1)
        before = np.hstack([np.ones((len(idx), 1)), survive[:, :-1]])
        g_sorted = before * (r - tail)
        g = np.empty_like(g_sorted)
        np.put_along_axis(g, order, g_sorted, axis=1)
        return g

    def gains_of_masks(self, i, masks):
        masks = np.asarray(masks, dtype=bool)
        r = self.rewards[i]
        picked = np.where(masks, r, -np.inf)
        top_idx = picked.argmax(axis=1)
        sorted_picked = np.sort(picked, axis=1)
        top1 = np.maximum(sorted_picked[:, -1], 0.0)
        top2 = np.maximum(sorted_picked[:, -2], 0.0) if self.size > 1 else np.zeros(len(masks))
        others = np.repeat(top1[:, None], self.size, axis=1)
        rows = np.arange(len(masks))
        has_any = masks.any(axis=1)
        others[rows[has_any], top_idx[has_any]] = top2[has_any]
        return np.maximum(r[None, :] - others, 0.0)

    def _greedy_state(self):
        return np.zeros(self.n)

    def _greedy_gain(self, state, j):
        return np.maximum(self.rewards[:, j] - state, 0.0)

    def _greedy_add(self, state, j):
        np.maximum(state, self.rewards[:, j], out=state)


class InfluenceObjective(SampledObjective):
    """Live-edge influence samples represented by per-sample reach matrices.

    ``reach[i, v, u]`` is true when ``u`` can be reached from ``v`` in sample
    ``i``; ``f_i(S)`` is the size of the union of the rows indexed by ``S``.
    """

    kind = "influence"

    def __init__(self, reach, B: float | None = None, samples: Sequence[LiveEdgeSample] | None = None):
        A = np.asarray(reach, dtype=bool)
        if A.ndim != 3 or A.shape[1] != A.shape[2] or A.shape[0] < 1:
            raise ValueError("reach must have shape (n, N, N)")
        self.reach = A
        self._reach_f = A.astype(np.float64)
        self.n, self.size, _ = A.shape
        self.B = float(self.size) if B is None else float(B)
        self.b = float(A.sum(axis=2).max())
        if self.B < self.b:
            raise ValueError(f"declared bound B = {self.B} is below a singleton value {self.b}")
        self.samples = list(samples) if samples is not None else None
        self.regimes = None
        if self.samples is not None:
            self.regimes = np.array([-1 if s.regime is None else s.regime for s in self.samples])

    @classmethod
    def from_samples(cls, samples: Sequence[LiveEdgeSample], B: float | None = None):
        samples = list(samples)
        if not samples:
            raise ValueError("need at least one live-edge sample")
        N = samples[0].nodes
        if any(s.nodes != N for s in samples):
            raise ValueError("all live-edge samples must share the node count")
        reach = np.stack([s.reach_matrix() for s in samples])
        return cls(reach, B=B, samples=samples)

    def sample(self, i: int) -> LiveEdgeSample:
        self._check_index(i)
        if self.samples is None:
            raise ValueError("objective was built from reach matrices only")
        return self.samples[i]

    def values(self, S) -> np.ndarray:
        S = self._check_set(S)
        if not S:
            return np.zeros(self.n)
        return self.reach[:, S, :].any(axis=1).sum(axis=1).astype(float)

    def values_of_masks(self, i, masks):
        masks = np.asarray(masks, dtype=np.float64)
        return ((masks @ self._reach_f[i]) > 0).sum(axis=1).astype(float)

    def _uncovered_terms(self, x):
        x = np.asarray(x, dtype=float)
        at_one = x >= 1.0
        logs = np.log1p(-np.where(at_one, 0.0, x))
        sumlog = np.einsum("ivu,v->iu", self._reach_f, logs)
        zeros = np.einsum("ivu,v->iu", self._reach_f, at_one.astype(float))
        return x, at_one, sumlog, zeros

    def multilinear(self, x) -> np.ndarray:
        _, _, sumlog, zeros = self._uncovered_terms(x)
        uncovered = np.where(zeros > 0.5, 0.0, np.exp(sumlog))
        return self.size - uncovered.sum(axis=1)

    def gradient(self, x, idx=None) -> np.ndarray:
        x, at_one, sumlog, zeros = self._uncovered_terms(x)
        idx = np.arange(self.n) if idx is None else np.asarray(idx, dtype=int)
        A = self._reach_f[idx]
        e = np.exp(sumlog[idx])
        z = zeros[idx]
        # targets with no fully-included coverer vs exactly one
        g_free = np.einsum("ivu,iu->iv", A, np.where(z < 0.5, e, 0.0))
        g_one = np.einsum("ivu,iu->iv", A, np.where(np.abs(z - 1.0) < 0.5, e, 0.0))
        denom = np.where(at_one, 1.0, 1.0 - np.minimum(x, 1.0))
        return np.where(at_one[None, :], g_one, g_free / denom[None, :])

    def gains_of_masks(self, i, masks):
        masks = np.asarray(masks, dtype=bool)
        A = self._reach_f[i]
        counts = masks.astype(np.float64) @ A
        free = (counts < 0.5).astype(np.float64) @ A.T
        single = (np.abs(counts - 1.0) < 0.5).astype(np.float64) @ A.T
        return np.where(masks, single, free)

    def _greedy_state(self):
        return np.zeros((self.n, self.size), dtype=bool)

    def _greedy_gain(self, state, j):
        return (self.reach[:, j, :] & ~state).sum(axis=1).astype(float)

    def _greedy_add(self, state, j):
        state |= self.reach[:, j, :]


# module-level operations ------------------------------------------------------

def eval_set(objective: SampledObjective, i: int, S) -> float:
    """Exact ``f_i(S)``; live-edge samples are evaluated by graph search."""
    objective._check_index(i)
    S = objective._check_set(S)
    if isinstance(objective, InfluenceObjective) and objective.samples is not None:
        return objective.samples[i](S)
    return float(objective.values(S)[i])


def all_subset_masks(size: int) -> np.ndarray:
    codes = np.arange(2**size, dtype=np.int64)
    return ((codes[:, None] >> np.arange(size)) & 1).astype(bool)


def multilinear_exact(objective: SampledObjective, i: int, x) -> float:
    """``F_i(x)`` by summing over all ``2^|V|`` subsets."""
    objective._check_index(i)
    if objective.size > MAX_EXACT_GROUND_SET:
        raise ValueError(
            f"exhaustive extension limited to |V| <= {MAX_EXACT_GROUND_SET}; use the estimator"
        )
    x = np.asarray(x, dtype=float)
    masks = all_subset_masks(objective.size)
    probs = np.prod(np.where(masks, x, 1.0 - x), axis=1)
    return float(probs @ objective.values_of_masks(i, masks))


def sample_sets(x, rng: np.random.Generator, count: int) -> np.ndarray:
    """Draw ``count`` sets from the product distribution with marginals ``x``."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    return rng.random((count, len(x))) < x


def grad_samples(objective: SampledObjective, i: int, x, rng: np.random.Generator, draws: int = 1) -> np.ndarray:
    """Per-draw unbiased estimates of ``grad F_i(x)``, shape ``(draws, |V|)``."""
    return objective.gains_of_masks(i, sample_sets(x, rng, draws))


def grad_estimate(objective: SampledObjective, i: int, x, rng: np.random.Generator, samples: int = 1) -> np.ndarray:
    """Unbiased estimate of ``grad F_i(x)`` averaged over ``samples`` draws."""
    objective._check_index(i)
    return grad_samples(objective, i, x, rng, samples).mean(axis=0)


def multilinear_sampled(objective: SampledObjective, x, rng: np.random.Generator, samples: int = 200) -> np.ndarray:
    """Monte-Carlo ``(F_1(x), ..., F_n(x))`` from ``samples`` shared set draws."""
    masks = sample_sets(x, rng, samples)
    return np.stack([objective.values_of_masks(i, masks) for i in range(objective.n)]).mean(axis=1)


def robust_value(objective: SampledObjective, ball: Chi2Ball, x, mode: str = "exact",
                 rng: np.random.Generator | None = None, samples: int = 200):
    """``G(x) = min_p sum_i p_i F_i(x)`` and the minimizing ``p``.

    ``mode="sampled"`` replaces each ``F_i(x)`` by a Monte-Carlo estimate;
    the returned ``p`` is then the worst case for the estimates, which is a
    biased estimate of the true worst case.
    """
    if ball.n != objective.n:
        raise ValueError("ball size does not match the number of samples")
    if mode == "exact":
        F = objective.multilinear(x)
    elif mode == "sampled":
        if rng is None:
            raise ValueError("sampled mode needs an rng")
        F = multilinear_sampled(objective, x, rng, samples)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    sol = linear_oracle(F, ball)
    return sol.value, sol.p


def lazy_greedy(objective: SampledObjective, weights, k: int) -> tuple[list[int], float]:
    """Lazy greedy maximization of ``sum_i w_i f_i(S)`` subject to ``|S| <= k``.

    Ties are broken towards the lowest element index.
    """
    w = np.asarray(weights, dtype=float)
    if k > objective.size:
        raise ValueError("k exceeds the ground set size")
    state = objective._greedy_state()
    heap = [(-float(w @ objective._greedy_gain(state, j)), j) for j in range(objective.size)]
    heapq.heapify(heap)
    tol = 1e-12
    S: list[int] = []
    total = 0.0
    while len(S) < k and heap:
        _, j = heapq.heappop(heap)
        cands = [(float(w @ objective._greedy_gain(state, j)), j)]
        best = cands[0][0]
        # stale bounds only overestimate: refresh everything that could still tie the best
        while heap and -heap[0][0] >= best - tol:
            _, i = heapq.heappop(heap)
            g = float(w @ objective._greedy_gain(state, i))
            cands.append((g, i))
            best = max(best, g)
        gain, choice = min(((g, i) for g, i in cands if g >= best - tol), key=lambda c: c[1])
        for g, i in cands:
            if i != choice:
                heapq.heappush(heap, (-g, i))
        S.append(choice)
        total += gain
        objective._greedy_add(state, choice)
    return sorted(S), total


def is_submodular_exhaustive(objective: SampledObjective, i: int, tol: float = 1e-9) -> bool:
    """Check monotonicity and diminishing returns of ``f_i`` over all ``S <= T``."""
    V = objective.size
    masks = all_subset_masks(V)
    vals = objective.values_of_masks(i, masks)
    codes = np.arange(2**V)
    for t in codes:
        for s in codes:
            if s & t != s:
                continue
            if vals[s] > vals[t] + tol:
                return False
            for e in range(V):
                bit = 1 << e
                if t & bit:
                    continue
                if vals[s | bit] - vals[s] < vals[t | bit] - vals[t] - tol:
                    return False
    return True


# file formats ---------------------------------------------------------------

def load_facility_csv(path, B: float | None = None) -> FacilityObjective:
    rewards = np.loadtxt(path, delimiter=",", ndmin=2)
    return FacilityObjective(rewards, B=B)


def save_facility_csv(objective: FacilityObjective, path):
    np.savetxt(path, objective.rewards, delimiter=",", fmt="%.17g")


_HEADER = re.compile(r"#\s*sample\s+(\d+)\s*/\s*nodes\s+(\d+)(?:\s*/\s*regime\s+(-?\d+))?")


def parse_live_edges(text: str) -> list[LiveEdgeSample]:
    samples: list[LiveEdgeSample] = []
    nodes = None
    regime = None
    edges: list[tuple[int, int]] = []

    def flush():
        if nodes is not None:
            samples.append(LiveEdgeSample(nodes, np.array(edges, dtype=int).reshape(-1, 2), regime))

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = _HEADER.match(line)
            if not m:
                raise ValueError(f"line {lineno}: malformed header {line!r}")
            flush()
            nodes = int(m.group(2))
            regime = int(m.group(3)) if m.group(3) is not None else None
            edges = []
            continue
        if nodes is None:
            raise ValueError(f"line {lineno}: edge before any sample header")
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected 'u v', got {line!r}")
        edges.append((int(parts[0]), int(parts[1])))
    flush()
    return samples


def format_live_edges(samples: Sequence[LiveEdgeSample]) -> str:
    out = []
    for i, s in enumerate(samples):
        header = f"# sample {i} / nodes {s.nodes}"
        if s.regime is not None:
            header += f" / regime {s.regime}"
        out.append(header)
        out.extend(f"{u} {v}" for u, v in s.active_edges)
    return "\n".join(out) + "\n"


def load_live_edges(path, B: float | None = None) -> InfluenceObjective:
    with open(path, encoding="utf-8") as fh:
        return InfluenceObjective.from_samples(parse_live_edges(fh.read()), B=B)


def load_objective(path, kind: str | None = None, B: float | None = None) -> SampledObjective:
    """Load a facility CSV or a live-edge text file (kind inferred from suffix)."""
    path = str(path)
    if kind is None:
        kind = "facility" if path.endswith(".csv") else "influence"
    if kind == "facility":
        return load_facility_csv(path, B=B)
    if kind == "influence":
        return load_live_edges(path, B=B)
    raise ValueError(f"unknown data kind {kind!r}")
