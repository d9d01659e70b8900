import csv
import json

import numpy as np
import pytest

from drosub.harness import (
    COMMON, RARE, ExperimentConfig, FacilitySpec, InfluenceSpec, SolverSettings, TrialResult, aggregate,
    default_threads, facility_suite, gen_facility, gen_influence_mixture, run_and_save, run_experiment,
    run_trial, synthetic_graph, trial_seeds, write_trials_csv,
)
from drosub.submodular import FacilityObjective, lazy_greedy

SMALL = dict(ground_size=8, k=2, n_train=6, n_test=20, trials=3,
             solver=dict(T=20, batch_c=2, round_count=20))


def path_graph(N):
    return np.array([(i, i + 1) for i in range(N - 1)], dtype=int)


# ------------------------------------------------------------------ generators

def test_influence_q_zero_all_common():
    samples = gen_influence_mixture(path_graph(6), 0.0, 0.025, 0.1, 50, np.random.default_rng(0))
    assert all(s.regime == COMMON for s in samples)


def test_influence_equal_probabilities_plain_icm():
    rng_a, rng_b = np.random.default_rng(1), np.random.default_rng(1)
    a = gen_influence_mixture(path_graph(6), 0.3, 0.2, 0.2, 30, rng_a)
    b = gen_influence_mixture(path_graph(6), 0.9, 0.2, 0.2, 30, rng_b)
    # the coin is still flipped, but the live edges have the same law; same stream gives same edges
    assert [s.active_edges.tolist() for s in a] == [s.active_edges.tolist() for s in b]


def test_influence_activation_rate():
    graph = path_graph(5)
    q, lo, hi = 0.3, 0.05, 0.6
    samples = gen_influence_mixture(graph, q, lo, hi, 10000, np.random.default_rng(2))
    rate = np.mean([len(s.active_edges) / len(graph) for s in samples])
    target = q * lo + (1 - q) * hi
    se = np.sqrt(target * (1 - target) / (10000 * len(graph)))
    # per-sample edge counts are correlated through the regime, so inflate by the cluster size
    assert abs(rate - target) <= 3 * se * np.sqrt(len(graph))
    assert np.mean([s.regime == RARE for s in samples]) == pytest.approx(q, abs=0.02)


def test_influence_rejects_bad_probabilities():
    with pytest.raises(ValueError):
        gen_influence_mixture(path_graph(3), 1.5, 0.1, 0.1, 1, np.random.default_rng(0))


def test_synthetic_graphs():
    rng = np.random.default_rng(3)
    er = synthetic_graph(30, InfluenceSpec(graph="er", edge_prob=0.2), rng)
    ws = synthetic_graph(30, InfluenceSpec(graph="ws", ws_degree=4, ws_beta=0.1), rng)
    for arcs in (er, ws):
        pairs = set(map(tuple, arcs.tolist()))
        assert all((v, u) in pairs for u, v in pairs)
    assert len(ws) == 2 * 30 * 2
    with pytest.raises(ValueError):
        synthetic_graph(10, InfluenceSpec(graph="ba"), rng)


def test_facility_zero_magnitude():
    samples = gen_facility(5, 10, FacilitySpec(scale=0.0), np.random.default_rng(4))
    obj = FacilityObjective.from_samples(samples)
    assert np.all(obj.values([0, 1, 2]) == 0)


def test_facility_sparsity_one_greedy_picks_most_frequent():
    samples = gen_facility(8, 400, FacilitySpec(sparsity=1, sigma=0.0), np.random.default_rng(5))
    R = np.stack([s.rewards for s in samples])
    assert np.all((R > 0).sum(axis=1) == 1)
    counts = (R > 0).sum(axis=0)
    obj = FacilityObjective(R)
    S, _ = lazy_greedy(obj, np.full(400, 1 / 400), 3)
    top = sorted(np.argsort(-counts, kind="stable")[:3].tolist())
    assert S == top


def test_facility_bound_is_max_reward():
    samples = gen_facility(6, 30, FacilitySpec(), np.random.default_rng(6))
    obj = FacilityObjective.from_samples(samples)
    assert obj.B == max(s.rewards.max() for s in samples)
    with pytest.raises(ValueError):
        gen_facility(3, 2, FacilitySpec(sparsity=4), np.random.default_rng(0))


def test_facility_suite_shape():
    obj = facility_suite(0, n=10, size=15)
    assert obj.n == 10 and obj.size == 15


# ------------------------------------------------------------------ config

def test_config_roundtrip(tmp_path):
    cfg = ExperimentConfig(problem="influence", **SMALL)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_dict()))
    back = ExperimentConfig.from_json(path)
    assert back == cfg
    assert isinstance(back.solver, SolverSettings)


@pytest.mark.parametrize("bad", [dict(problem="x"), dict(n_train=0), dict(trials=0), dict(k=99),
                                 dict(rho=-1.0), dict(erm="x"), dict(solver={"alg": "x"}),
                                 dict(influence={"q": 2.0}), dict(solver={"bogus": 1}), dict(extra=1)])
def test_config_validation(bad):
    with pytest.raises((ValueError, TypeError)):
        ExperimentConfig.from_dict({**SMALL, **bad})


# ------------------------------------------------------------------ trials

def test_trial_values_in_range():
    cfg = ExperimentConfig(**SMALL)
    r = run_trial(cfg, trial_seeds(cfg)[0])
    for name in ("dro_train", "dro_test", "erm_train", "erm_test"):
        assert getattr(r, name) >= 0
    assert r.dro_rare_test is None


def test_influence_trial_reports_rare_class():
    cfg = ExperimentConfig(problem="influence", **{**SMALL, "ground_size": 15, "n_test": 60},
                           influence=dict(q=0.5, edge_prob=0.3))
    r = run_trial(cfg, trial_seeds(cfg)[0])
    assert r.dro_rare_test is not None and 0 <= r.dro_rare_test <= 15


def test_no_shift_no_variance_gives_equal_arms():
    # identical samples: every user values every facility at 1
    cfg = ExperimentConfig(**{**SMALL, "test_equals_train": True}, facility=dict(sparsity=8, sigma=0.0))
    r = run_trial(cfg, trial_seeds(cfg)[0])
    assert abs(r.dro_test - r.erm_test) <= 0.02 * 1.0


def test_rho_zero_arms_identical():
    cfg = ExperimentConfig(**{**SMALL, "rho": 0.0, "erm": "mfw"})
    for r in run_experiment(cfg, threads=1):
        assert r.dro_test == r.erm_test and r.dro_train == r.erm_train


def test_reproducible_across_thread_counts():
    cfg = ExperimentConfig(**SMALL)
    assert run_experiment(cfg, threads=1) == run_experiment(cfg, threads=3)


def test_thread_env(monkeypatch):
    monkeypatch.setenv("DROSUB_THREADS", "3")
    assert default_threads() == 3
    monkeypatch.delenv("DROSUB_THREADS")
    assert default_threads() >= 1


# ------------------------------------------------------------------ aggregation

def make_result(t, dro, erm, rare=None):
    return TrialResult(t, str(t), dro, dro, erm, erm, dro, erm, rare, rare)


def test_aggregate_single_trial():
    s = aggregate([make_result(0, 1.0, 0.5)])
    assert s["columns"]["dro_test"]["variance"] == 0.0
    assert s["test"]["absolute_improvement"] == 0.5
    assert s["test"]["relative_improvement"] == 1.0


def test_aggregate_identical_columns_are_ties():
    s = aggregate([make_result(t, v, v) for t, v in enumerate([1.0, 2.0, 3.0])])
    assert s["test"]["absolute_improvement"] == 0.0
    assert s["test"]["tie_rate"] == 1.0 and s["test"]["win_rate"] == 0.0
    assert s["columns"]["dro_test"]["variance"] == pytest.approx(np.var([1.0, 2.0, 3.0]))


def test_aggregate_rare_block_and_empty():
    s = aggregate([make_result(0, 1.0, 0.5, rare=0.2), make_result(1, 1.0, 0.5, rare=None)])
    assert s["rare_test"]["dro_mean"] == 0.2
    with pytest.raises(ValueError):
        aggregate([])


def test_outputs_written(tmp_path):
    cfg = ExperimentConfig(**SMALL)
    summary = run_and_save(cfg, tmp_path / "out", threads=1)
    rows = list(csv.DictReader(open(tmp_path / "out" / "trials.csv")))
    assert len(rows) == cfg.trials
    assert json.loads((tmp_path / "out" / "summary.json").read_text())["trials"] == summary["trials"]


def test_csv_blank_for_missing(tmp_path):
    write_trials_csv([make_result(0, 1.0, 0.5)], tmp_path / "t.csv")
    row = next(csv.DictReader(open(tmp_path / "t.csv")))
    assert row["dro_rare_test"] == ""
