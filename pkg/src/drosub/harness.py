"""Synthetic DRO-versus-ERM experiments.

A trial draws a training sample and an independent held-out sample from the
same law, solves the robust problem on the training sample (MFW followed by
swap rounding), solves the plain empirical-mean problem, and evaluates both
resulting set distributions on the held-out samples.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import networkx as nx
import numpy as np

from .chi2_core import Chi2Ball, linear_oracle
from .rounding import RoundedDistribution, build_distribution
from .solvers import MFWConfig, fw_plain, fw_smoothed, mfw
from .submodular import FacilityObjective, FacilitySample, InfluenceObjective, LiveEdgeSample, lazy_greedy

RARE, COMMON = 0, 1
THREADS_ENV = "DROSUB_THREADS"
SOLVERS = {"mfw": mfw, "fw": fw_plain, "equator": fw_smoothed}


def _from_dict(cls, data: dict):
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**data)


@dataclass
class FacilitySpec:
    """Sparse heavy-tailed rewards.

    Each sample rates ``sparsity`` distinct facilities. Facility ``j`` is chosen
    with probability proportional to ``(j + 1) ** -popularity`` and
    magnitudes are ``scale * LogNormal(mu, sigma)``.
    """

    sparsity: int = 3
    popularity: float = 1.0
    mu: float = 0.0
    sigma: float = 1.0
    scale: float = 1.0


@dataclass
class InfluenceSpec:
    q: float = 0.1
    p_low: float = 0.025
    p_high: float = 0.1
    graph: str = "er"
    edge_prob: float = 0.2
    ws_degree: int = 10
    ws_beta: float = 0.1


@dataclass
class SolverSettings:
    alg: str = "mfw"
    T: int = 100
    batch_c: int = 1
    grad_samples: int = 1
    gradient: str = "sampled"
    step_schedule: str = "power"
    round_count: int = 200
    u: float = 0.05
    smoothing_samples: int = 10


@dataclass
class ExperimentConfig:
    problem: str = "facility"
    ground_size: int = 20
    k: int = 3
    n_train: int = 50
    n_test: int = 500
    rho: float = 10.0
    trials: int = 10
    seed: int = 0
    # "greedy": lazy greedy on the training mean; "mfw": the DRO pipeline with rho = 0
    erm: str = "greedy"
    test_equals_train: bool = False
    solver: SolverSettings = field(default_factory=SolverSettings)
    facility: FacilitySpec = field(default_factory=FacilitySpec)
    influence: InfluenceSpec = field(default_factory=InfluenceSpec)

    def __post_init__(self):
        if isinstance(self.solver, dict):
            self.solver = _from_dict(SolverSettings, self.solver)
        if isinstance(self.facility, dict):
            self.facility = _from_dict(FacilitySpec, self.facility)
        if isinstance(self.influence, dict):
            self.influence = _from_dict(InfluenceSpec, self.influence)
        if self.problem not in ("facility", "influence"):
            raise ValueError(f"unknown problem {self.problem!r}")
        if self.n_train < 1 or self.trials < 1 or self.n_test < 1:
            raise ValueError("n_train, n_test and trials must be at least 1")
        if not 0 <= self.k <= self.ground_size:
            raise ValueError("k must lie in [0, ground_size]")
        if self.rho < 0:
            raise ValueError("rho must be nonnegative")
        if self.erm not in ("greedy", "mfw"):
            raise ValueError(f"unknown ERM solver {self.erm!r}")
        if self.solver.alg not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver.alg!r}")
        inf = self.influence
        if not (0 <= inf.q <= 1 and 0 <= inf.p_low <= 1 and 0 <= inf.p_high <= 1):
            raise ValueError("influence probabilities must lie in [0, 1]")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        return _from_dict(cls, dict(data))

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrialResult:
    trial: int
    seed: str
    dro_train: float
    dro_test: float
    erm_train: float
    erm_test: float
    dro_train_robust: float
    erm_train_robust: float
    dro_rare_test: float | None = None
    erm_rare_test: float | None = None

    COLUMNS = ("dro_train", "dro_test", "erm_train", "erm_test", "dro_train_robust",
               "erm_train_robust", "dro_rare_test", "erm_rare_test")


# ---------------------------------------------------------------- generators

def synthetic_graph(nodes: int, spec: InfluenceSpec, rng: np.random.Generator) -> np.ndarray:
    """Directed arc list; undirected edges contribute both directions."""
    seed = int(rng.integers(2**31))
    if spec.graph == "er":
        G = nx.gnp_random_graph(nodes, spec.edge_prob, seed=seed, directed=False)
    elif spec.graph == "ws":
        G = nx.watts_strogatz_graph(nodes, spec.ws_degree, spec.ws_beta, seed=seed)
    else:
        raise ValueError(f"unknown graph model {spec.graph!r}")
    arcs = [(u, v) for u, v in G.edges()] + [(v, u) for u, v in G.edges()]
    return np.array(sorted(arcs), dtype=np.int64).reshape(-1, 2)


def gen_influence_mixture(graph, q: float, p_low: float, p_high: float, n: int,
                          rng: np.random.Generator, nodes: int | None = None) -> list[LiveEdgeSample]:
    """Live-edge samples from a two-regime independent cascade mixture.

    With probability ``q`` a sample uses edge probability ``p_low`` (labelled
    ``RARE``), otherwise ``p_high`` (``COMMON``).
    """
    arcs = np.asarray(graph, dtype=np.int64).reshape(-1, 2)
    if not (0 <= q <= 1 and 0 <= p_low <= 1 and 0 <= p_high <= 1):
        raise ValueError("probabilities must lie in [0, 1]")
    if nodes is None:
        nodes = int(arcs.max()) + 1 if len(arcs) else 0
    out = []
    for _ in range(n):
        rare = rng.random() < q
        prob = p_low if rare else p_high
        live = rng.random(len(arcs)) < prob
        out.append(LiveEdgeSample(nodes, arcs[live], RARE if rare else COMMON))
    return out


def gen_facility(size: int, n: int, spec: FacilitySpec, rng: np.random.Generator) -> list[FacilitySample]:
    if not 1 <= spec.sparsity <= size:
        raise ValueError("sparsity must lie in [1, |V|]")
    weights = (np.arange(1, size + 1, dtype=float)) ** -spec.popularity
    weights /= weights.sum()
    out = []
    for _ in range(n):
        r = np.zeros(size)
        liked = rng.choice(size, size=spec.sparsity, replace=False, p=weights)
        r[liked] = spec.scale * rng.lognormal(spec.mu, spec.sigma, size=spec.sparsity)
        out.append(FacilitySample(r))
    return out


def facility_suite(seed: int, n: int = 100, size: int = 100, sparsity: int = 5) -> FacilityObjective:
    """Benchmark instance used for solver comparisons: ``n`` sparse users over ``size`` facilities."""
    spec = FacilitySpec(sparsity=sparsity)
    return FacilityObjective.from_samples(gen_facility(size, n, spec, np.random.default_rng(seed)))


# ---------------------------------------------------------------- trials

def _objectives(cfg: ExperimentConfig, graph, train_rng, test_rng):
    if cfg.problem == "facility":
        train = FacilityObjective.from_samples(gen_facility(cfg.ground_size, cfg.n_train, cfg.facility, train_rng))
        test = train if cfg.test_equals_train else FacilityObjective.from_samples(
            gen_facility(cfg.ground_size, cfg.n_test, cfg.facility, test_rng))
        return train, test
    s = cfg.influence
    train = InfluenceObjective.from_samples(
        gen_influence_mixture(graph, s.q, s.p_low, s.p_high, cfg.n_train, train_rng, cfg.ground_size))
    test = train if cfg.test_equals_train else InfluenceObjective.from_samples(
        gen_influence_mixture(graph, s.q, s.p_low, s.p_high, cfg.n_test, test_rng, cfg.ground_size))
    return train, test


def _continuous_arm(train, rho: float, cfg: ExperimentConfig, solver_seed: int, round_seed) -> RoundedDistribution:
    s = cfg.solver
    ball = Chi2Ball(rho, train.n)
    mcfg = MFWConfig(T=s.T, batch_c=min(s.batch_c, train.n), k=cfg.k, seed=solver_seed,
                     step_schedule=s.step_schedule, grad_samples=s.grad_samples, gradient=s.gradient)
    if s.alg == "equator":
        run = fw_smoothed(train, ball, mcfg, u=s.u, smoothing_samples=s.smoothing_samples)
    else:
        run = SOLVERS[s.alg](train, ball, mcfg)
    return build_distribution(run.x_final, cfg.k, s.round_count, np.random.default_rng(round_seed))


def _evaluate(dist: RoundedDistribution, obj, regimes=None, rare_only=False) -> float | None:
    vals = dist.expected_values(obj)
    if rare_only:
        vals = vals[regimes == RARE]
        if len(vals) == 0:
            return None
    return float(vals.mean())


def _graph_for(cfg: ExperimentConfig):
    if cfg.problem != "influence":
        return None
    graph_ss = np.random.SeedSequence(cfg.seed).spawn(2)[0]
    return synthetic_graph(cfg.ground_size, cfg.influence, np.random.default_rng(graph_ss))


def trial_seeds(cfg: ExperimentConfig) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(cfg.seed).spawn(2)[1].spawn(cfg.trials)


def run_trial(cfg: ExperimentConfig, trial_seed: np.random.SeedSequence, trial: int = 0,
              graph=None) -> TrialResult:
    """One DRO-versus-ERM comparison; train and test draws use disjoint streams."""
    if graph is None:
        graph = _graph_for(cfg)
    train_ss, test_ss, solver_ss, round_ss = trial_seed.spawn(4)
    train, test = _objectives(cfg, graph, np.random.default_rng(train_ss), np.random.default_rng(test_ss))
    solver_seed = int(solver_ss.generate_state(1)[0])

    dro = _continuous_arm(train, cfg.rho, cfg, solver_seed, round_ss)
    if cfg.erm == "mfw":
        erm = _continuous_arm(train, 0.0, cfg, solver_seed, round_ss)
    else:
        S, _ = lazy_greedy(train, np.full(train.n, 1.0 / train.n), cfg.k)
        erm = RoundedDistribution.uniform([S])

    ball = Chi2Ball(cfg.rho, train.n)
    result = TrialResult(
        trial=trial,
        seed="-".join(map(str, trial_seed.spawn_key)) + f"@{cfg.seed}",
        dro_train=_evaluate(dro, train),
        dro_test=_evaluate(dro, test),
        erm_train=_evaluate(erm, train),
        erm_test=_evaluate(erm, test),
        dro_train_robust=linear_oracle(dro.expected_values(train), ball).value,
        erm_train_robust=linear_oracle(erm.expected_values(train), ball).value,
    )
    if cfg.problem == "influence":
        result.dro_rare_test = _evaluate(dro, test, test.regimes, rare_only=True)
        result.erm_rare_test = _evaluate(erm, test, test.regimes, rare_only=True)
    return result


def default_threads() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_experiment(cfg: ExperimentConfig, threads: int | None = None) -> list[TrialResult]:
    """All trials of ``cfg``; results come back in trial order regardless of threading."""
    graph = _graph_for(cfg)
    seeds = trial_seeds(cfg)
    threads = threads or default_threads()
    jobs = list(enumerate(seeds))
    if threads == 1:
        return [run_trial(cfg, ss, t, graph) for t, ss in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda job: run_trial(cfg, job[1], job[0], graph), jobs))


# ---------------------------------------------------------------- summaries

def _paired(a: np.ndarray, b: np.ndarray, tol: float = 1e-12) -> dict:
    diff = a - b
    wins = float(np.mean(diff > tol))
    ties = float(np.mean(np.abs(diff) <= tol))
    return {"win_rate": wins, "tie_rate": ties, "loss_rate": 1.0 - wins - ties,
            "not_worse_rate": wins + ties}


def aggregate(results: list[TrialResult]) -> dict:
    """Means, across-trial variances (denominator = number of trials) and paired DRO-vs-ERM rates."""
    if not results:
        raise ValueError("need at least one trial")
    summary: dict = {"trials": len(results), "columns": {}}
    cols = {}
    for name in TrialResult.COLUMNS:
        raw = [getattr(r, name) for r in results]
        if all(v is None for v in raw):
            continue
        arr = np.array([np.nan if v is None else v for v in raw], dtype=float)
        cols[name] = arr
        ok = arr[~np.isnan(arr)]
        summary["columns"][name] = {
            "mean": float(ok.mean()) if len(ok) else None,
            "variance": float(ok.var()) if len(ok) else None,
            "count": int(len(ok)),
        }
    pairs = [("test", "dro_test", "erm_test")]
    if "dro_rare_test" in cols:
        pairs.append(("rare_test", "dro_rare_test", "erm_rare_test"))
    for label, d, e in pairs:
        mask = ~(np.isnan(cols[d]) | np.isnan(cols[e]))
        a, b = cols[d][mask], cols[e][mask]
        if not len(a):
            continue
        dm, em = float(a.mean()), float(b.mean())
        block = {
            "dro_mean": dm,
            "erm_mean": em,
            "absolute_improvement": dm - em,
            "relative_improvement": (dm - em) / em if em != 0 else (0.0 if dm == em else math.inf),
            "dro_variance": float(a.var()),
            "erm_variance": float(b.var()),
        }
        block.update(_paired(a, b))
        summary[label] = block
    return summary


def write_trials_csv(results: list[TrialResult], path):
    names = ["trial", "seed", *TrialResult.COLUMNS]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for r in results:
            row = []
            for n in names:
                v = getattr(r, n)
                row.append("" if v is None else (repr(float(v)) if isinstance(v, float) else v))
            w.writerow(row)


def write_summary_json(summary: dict, path):
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def run_and_save(cfg: ExperimentConfig, out_dir, threads: int | None = None) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = run_experiment(cfg, threads)
    summary = aggregate(results)
    summary["config"] = cfg.to_dict()
    write_trials_csv(results, out / "trials.csv")
    write_summary_json(summary, out / "summary.json")
    return summary
