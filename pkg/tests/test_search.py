import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cmkt.data import SyntheticConfig, generate_synthetic, split_dataset
from cmkt.models import build_model, load_preset
from cmkt.training import (
    ConfigError, RandomStrategy, SearchSpace, TPEStrategy, TrialRecord, hyperparameter_search, method_pipeline,
    networks_from_params, rank_trials, select_top_k_and_retrain,
)
from cmkt.training.search import pool_sizes, read_ledger


def test_space_defaults_match_ranges():
    s = SearchSpace()
    assert s.learning_rate == (1e-6, 1e-3) and s.weight_decay == (1e-7, 1e-3)
    assert (s.n_conv, s.filters, s.kernel, s.n_dense, s.neurons) == ((3, 5), (16, 48), (2, 4), (1, 3), (32, 360))
    assert s.dropout == (0.01, 0.1)
    with pytest.raises(ConfigError):
        SearchSpace(n_conv=(5, 3))
    with pytest.raises(ConfigError):
        SearchSpace(learning_rate=(0.0, 1e-3))


@pytest.mark.parametrize("strategy", ["random", "tpe"])
def test_single_trial_is_deterministic(strategy):
    seen = []

    def pipeline(params, seed):
        seen.append((params, seed))
        return 0.5

    a = hyperparameter_search(SearchSpace(), pipeline, n_trials=1, seed=7, strategy=strategy)
    b = hyperparameter_search(SearchSpace(), pipeline, n_trials=1, seed=7, strategy=strategy)
    assert a[0].params == b[0].params and seen[0][1] == 7
    assert SearchSpace().contains(a[0].params)


@pytest.mark.parametrize("strategy", ["random", "tpe"])
def test_every_sample_inside_ranges(strategy):
    space = SearchSpace()
    records = hyperparameter_search(space, lambda p, s: p["dropout"], n_trials=40, seed=1, strategy=strategy)
    assert all(space.contains(r.params) for r in records)
    assert {r.params["n_conv"] for r in records} <= {3, 4, 5}


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=30, deadline=None)
def test_random_samples_inside_ranges(seed):
    space = SearchSpace()
    strat = RandomStrategy(seed)
    for _ in range(5):
        assert space.contains(strat.suggest(space))


def toy(params, seed=0):
    # peak 1.0 at lr = 1e-4, wd = 1e-5 (log scale)
    return math.exp(-((math.log10(params["learning_rate"]) + 4) ** 2 + (math.log10(params["weight_decay"]) + 5) ** 2) / 2)


def test_toy_objective_best_of_60_within_5_percent():
    space = SearchSpace(architecture=False)
    grid = [toy({"learning_rate": 10**a, "weight_decay": 10**b})
            for a in np.linspace(-6, -3, 61) for b in np.linspace(-7, -3, 81)]
    optimum = max(grid)
    assert optimum == pytest.approx(1.0)
    best = max(r.val_accuracy for r in hyperparameter_search(space, toy, n_trials=60, seed=0, strategy="tpe"))
    assert best >= 0.95 * optimum


def test_failed_trials_score_zero_and_search_continues(tmp_path):
    calls = []

    def flaky(params, seed):
        calls.append(seed)
        if len(calls) % 2:
            raise RuntimeError("boom")
        return float("nan") if len(calls) == 4 else 0.8

    ledger = tmp_path / "ledger.csv"
    recs = hyperparameter_search(SearchSpace(architecture=False), flaky, n_trials=6, seed=0, strategy="random",
                                 ledger=ledger)
    assert [r.val_accuracy for r in recs] == [0.0, 0.8, 0.0, 0.0, 0.0, 0.8]
    rows = read_ledger(ledger)
    assert [r.trial_id for r in rows] == list(range(6))
    assert [r.val_accuracy for r in rows] == [r.val_accuracy for r in recs]
    text = ledger.read_text()
    assert "RuntimeError: boom" in text and "non-finite" in text


def test_ledger_is_append_only(tmp_path):
    ledger = tmp_path / "l.csv"
    hyperparameter_search(SearchSpace(architecture=False), toy, n_trials=2, strategy="random", ledger=ledger)
    hyperparameter_search(SearchSpace(architecture=False), toy, n_trials=3, strategy="random", ledger=ledger)
    assert len(read_ledger(ledger)) == 5
    assert ledger.read_text().count("trial_id") == 1


def test_rank_tie_break():
    trials = [TrialRecord(2, {}, 0.9, 1.0), TrialRecord(1, {}, 0.8, 1.0), TrialRecord(0, {}, 0.9, 1.0)]
    assert {t.trial_id for t in rank_trials(trials, 2)} == {0, 2}
    assert [t.trial_id for t in rank_trials(trials, 3)] == [0, 2, 1]
    assert rank_trials(trials, 1)[0].trial_id == 0
    with pytest.raises(ConfigError):
        rank_trials(trials, 4)


def test_pool_rule_and_sampled_networks_build():
    assert pool_sizes(3) == [2, 2, 2]
    assert pool_sizes(5) == [2, 1, 1, 2, 2]
    params = {"n_conv": 4, "n_dense": 2, "neurons_0": 40, "dropout": 0.05,
              **{f"filters_{i}": 16 for i in range(4)}, **{f"kernel_{i}": 3 for i in range(4)}}
    nets = networks_from_params(params)
    assert nets["encoder"].output_shape == (16 * 10 * 10,)
    assert sum(l["type"] == "dense" for l in nets["classifier"].layers) == 2
    build_model(nets["encoder"])
    build_model(nets["classifier"])


def test_top_k_retrain_end_to_end(tmp_path):
    split = split_dataset(generate_synthetic(SyntheticConfig(n_samples=60)), seed=0)
    space = SearchSpace(n_conv=(3, 3), filters=(16, 16), n_dense=(1, 1))
    run = method_pipeline("visual-only", split, load_preset("desk"), space, epochs=1, batch_size=32)
    trials = hyperparameter_search(space, run, n_trials=3, seed=0, strategy="random", checkpoint_dir=tmp_path)
    assert all(t.checkpoint and (tmp_path / f"trial_{t.trial_id:04d}.npz").exists() for t in trials)
    seen = []

    def retrain(params, seed):
        seen.append(seed)
        return run(params, seed)

    out = select_top_k_and_retrain(trials, 2, retrain, split.test, seed=100, runtime_data=split.validation)
    assert len(out) == 2
    best = rank_trials(trials, 2)
    assert seen == [100 + t.trial_id for t in best]
    for _, report in out:
        assert 0 <= report.accuracy <= 1 and report.prediction_runtime_s > 0


def test_tpe_observe_needs_a_pending_trial():
    strat = TPEStrategy(seed=0, n_startup_trials=2)
    space = SearchSpace(architecture=False)
    p = strat.suggest(space)
    strat.observe(p, 0.3)
    with pytest.raises(KeyError):
        strat.observe(p, 0.3)
