"""Hyperparameter search and top-k retraining.

A search strategy exposes ``suggest(space) -> params`` and
``observe(params, score)``. The default samples with optuna's TPE sampler
through its ask/tell interface; :class:`RandomStrategy` is a dependency-free
fallback drawing each value independently (log-uniform for the rates).
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from ..evaluation import MetricsReport
from ..models import ArchitectureSpec
from .config import ConfigError, TrialRecord

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SearchSpace:
    """Ranges are inclusive; the rate ranges are sampled log-uniformly."""

    learning_rate: tuple[float, float] = (1e-6, 1e-3)
    weight_decay: tuple[float, float] = (1e-7, 1e-3)
    n_conv: tuple[int, int] = (3, 5)
    filters: tuple[int, int] = (16, 48)
    kernel: tuple[int, int] = (2, 4)
    n_dense: tuple[int, int] = (1, 3)  # counts the output layer
    neurons: tuple[int, int] = (32, 360)
    dropout: tuple[float, float] = (0.01, 0.1)
    architecture: bool = True  # False: tune learning rate and weight decay only

    def __post_init__(self):
        for name in ("learning_rate", "weight_decay", "n_conv", "filters", "kernel", "n_dense", "neurons", "dropout"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"empty range for {name}: [{lo}, {hi}]")
        if self.learning_rate[0] <= 0 or self.weight_decay[0] <= 0:
            raise ConfigError("log-uniform ranges need positive bounds")
        if self.n_conv[0] < 1 or self.n_dense[0] < 1:
            raise ConfigError("need at least one conv and one dense layer")

    def contains(self, params: dict) -> bool:
        """True iff every sampled value lies inside its range."""
        def inside(v, rng):
            return rng[0] <= v <= rng[1]

        ok = inside(params["learning_rate"], self.learning_rate) and inside(params["weight_decay"], self.weight_decay)
        if not self.architecture:
            return ok
        ok &= inside(params["n_conv"], self.n_conv) and inside(params["n_dense"], self.n_dense)
        ok &= inside(params["dropout"], self.dropout)
        ok &= all(inside(params[f"filters_{i}"], self.filters) and inside(params[f"kernel_{i}"], self.kernel)
                  for i in range(params["n_conv"]))
        ok &= all(inside(params[f"neurons_{i}"], self.neurons) for i in range(params["n_dense"] - 1))
        return bool(ok)


class Strategy(Protocol):
    def suggest(self, space: SearchSpace) -> dict: ...

    def observe(self, params: dict, score: float) -> None: ...


def _sample(space: SearchSpace, draw_float, draw_int) -> dict:
    params = {
        "learning_rate": draw_float("learning_rate", *space.learning_rate, True),
        "weight_decay": draw_float("weight_decay", *space.weight_decay, True),
    }
    if not space.architecture:
        return params
    params["n_conv"] = draw_int("n_conv", *space.n_conv)
    for i in range(params["n_conv"]):
        params[f"filters_{i}"] = draw_int(f"filters_{i}", *space.filters)
        params[f"kernel_{i}"] = draw_int(f"kernel_{i}", *space.kernel)
    params["n_dense"] = draw_int("n_dense", *space.n_dense)
    for i in range(params["n_dense"] - 1):
        params[f"neurons_{i}"] = draw_int(f"neurons_{i}", *space.neurons)
    params["dropout"] = draw_float("dropout", *space.dropout, False)
    return params


class RandomStrategy:
    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def suggest(self, space: SearchSpace) -> dict:
        def draw_float(name, lo, hi, log_scale):
            if log_scale:
                return float(math.exp(self.rng.uniform(math.log(lo), math.log(hi))))
            return float(self.rng.uniform(lo, hi))

        def draw_int(name, lo, hi):
            return int(self.rng.integers(lo, hi + 1))

        return _sample(space, draw_float, draw_int)

    def observe(self, params: dict, score: float) -> None:
        pass


class TPEStrategy:
    """Tree-structured Parzen estimator via optuna (maximizes the score)."""

    def __init__(self, seed: int = 0, n_startup_trials: int = 10):
        import optuna

        optuna.logging.set_verbosity(optuna.logging.WARNING)
        sampler = optuna.samplers.TPESampler(seed=seed, n_startup_trials=n_startup_trials)
        self.study = optuna.create_study(direction="maximize", sampler=sampler)
        self._pending: dict[int, object] = {}

    def suggest(self, space: SearchSpace) -> dict:
        trial = self.study.ask()

        def draw_float(name, lo, hi, log_scale):
            return trial.suggest_float(name, lo, hi, log=log_scale)

        def draw_int(name, lo, hi):
            return trial.suggest_int(name, lo, hi)

        params = _sample(space, draw_float, draw_int)
        self._pending[id(params)] = trial
        return params

    def observe(self, params: dict, score: float) -> None:
        trial = self._pending.pop(id(params))
        self.study.tell(trial, score)


def make_strategy(name: str = "tpe", seed: int = 0) -> Strategy:
    if name == "tpe":
        try:
            return TPEStrategy(seed)
        except ImportError:
            log.warning("optuna not installed; falling back to random search")
            return RandomStrategy(seed)
    if name == "random":
        return RandomStrategy(seed)
    raise ConfigError(f"unknown search strategy {name!r}; use tpe or random")


def pool_sizes(n_conv: int) -> list[int]:
    """Pool 2 after the first and the last two conv layers, 1 elsewhere."""
    return [2 if i == 0 or i >= n_conv - 2 else 1 for i in range(n_conv)]


def networks_from_params(params: dict, input_shape=(1, 80, 80)) -> dict[str, ArchitectureSpec]:
    """Encoder + classifier specs for one sampled configuration."""
    layers = []
    for i, pool in enumerate(pool_sizes(params["n_conv"])):
        layers += [
            {"type": "conv", "out_channels": params[f"filters_{i}"], "kernel": params[f"kernel_{i}"], "padding": "same"},
            {"type": "activation", "name": "relu"},
            {"type": "maxpool", "kernel": pool, "stride": pool},
        ]
    layers.append({"type": "flatten", "tag": "encoded"})
    encoder = ArchitectureSpec(tuple(input_shape), layers)
    head = []
    for i in range(params["n_dense"] - 1):
        head += [
            {"type": "dense", "out_dim": params[f"neurons_{i}"]},
            {"type": "activation", "name": "relu"},
            {"type": "dropout", "rate": params["dropout"]},
        ]
    head += [{"type": "dense", "out_dim": 1}, {"type": "activation", "name": "sigmoid"}]
    classifier = ArchitectureSpec(encoder.output_shape, head)
    return {"encoder": encoder, "classifier": classifier}


LEDGER_FIELDS = ["trial_id", "params", "val_accuracy", "runtime_s", "checkpoint", "error"]


def append_ledger(path, record: TrialRecord, error: str = "") -> None:
    path = Path(path)
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LEDGER_FIELDS)
        if new:
            w.writeheader()
        w.writerow({"trial_id": record.trial_id, "params": json.dumps(record.params, sort_keys=True),
                    "val_accuracy": f"{record.val_accuracy:.6f}", "runtime_s": f"{record.runtime_s:.3f}",
                    "checkpoint": record.checkpoint or "", "error": error})


def read_ledger(path) -> list[TrialRecord]:
    with open(path, newline="") as fh:
        return [TrialRecord(int(r["trial_id"]), json.loads(r["params"]), float(r["val_accuracy"]),
                            float(r["runtime_s"]), r["checkpoint"] or None)
                for r in csv.DictReader(fh)]


def hyperparameter_search(space: SearchSpace, pipeline: Callable, n_trials: int = 300, seed: int = 0,
                          strategy: Strategy | str = "tpe", ledger=None, checkpoint_dir=None) -> list[TrialRecord]:
    """Sequential suggest -> train -> score loop maximizing validation accuracy.

    ``pipeline(params, seed)`` returns either a validation accuracy or a
    ``TrainResult``. A raised exception scores the trial 0 and the search
    continues. With ``ledger`` set, every trial is appended to that CSV as
    it finishes; with ``checkpoint_dir`` set, trained models are saved there.
    """
    from .pipelines import TrainResult, save_predictor

    if n_trials < 1:
        raise ConfigError("n_trials must be at least 1")
    if isinstance(strategy, str):
        strategy = make_strategy(strategy, seed)
    records = []
    for trial_id in range(n_trials):
        params = strategy.suggest(space)
        start = time.perf_counter()
        error, ckpt = "", None
        try:
            out = pipeline(params, seed + trial_id)
            if isinstance(out, TrainResult):
                score = out.record.val_accuracy
                if checkpoint_dir is not None:
                    ckpt = str(save_predictor(Path(checkpoint_dir) / f"trial_{trial_id:04d}.npz", out.model,
                                              seed + trial_id, {"params": params}))
            else:
                score = float(out)
            if not math.isfinite(score):
                raise ValueError(f"non-finite score {score}")
        except Exception as exc:  # noqa: BLE001  a failed trial must not end the search
            log.warning("trial %d failed: %s", trial_id, exc)
            score, error = 0.0, f"{type(exc).__name__}: {exc}"
        runtime = time.perf_counter() - start
        strategy.observe(params, score)
        rec = TrialRecord(trial_id, params, min(max(score, 0.0), 1.0), runtime, ckpt)
        records.append(rec)
        if ledger is not None:
            append_ledger(ledger, rec, error)
        log.info("trial %d: val_acc %.4f (%.1fs)", trial_id, rec.val_accuracy, runtime)
    return records


def rank_trials(trials: list[TrialRecord], k: int) -> list[TrialRecord]:
    """Top ``k`` by validation accuracy, ties broken by ascending trial id."""
    if k < 1:
        raise ConfigError("k must be at least 1")
    if len(trials) < k:
        raise ConfigError(f"need at least {k} trials, got {len(trials)}")
    return sorted(trials, key=lambda t: (-t.val_accuracy, t.trial_id))[:k]


def select_top_k_and_retrain(trials: list[TrialRecord], k: int, retrain: Callable, test, seed: int = 10_000,
                             runtime_data=None) -> list[tuple[object, MetricsReport]]:
    """Retrain the ``k`` best trials with fresh seeds and evaluate them on ``test``.

    ``retrain(params, seed)`` must return a ``TrainResult``. The fresh seed of
    a trial is ``seed + trial_id``.
    """
    from .pipelines import evaluate_model

    out = []
    for t in rank_trials(trials, k):
        result = retrain(t.params, seed + t.trial_id)
        report = evaluate_model(result.model, test, tag=f"trial_{t.trial_id}",
                                training_runtime_s=result.record.runtime_s, runtime_data=runtime_data)
        out.append((result.model, report))
    return out


def method_pipeline(method: str, split, preset: dict, space: SearchSpace, **train_kwargs) -> Callable:
    """``pipeline(params, seed)`` that trains ``method`` with sampled settings.

    Architecture parameters replace the encoder/classifier of the methods
    that have them; the mapping and fusion methods keep their preset
    networks and take only the sampled learning rate and weight decay.
    """
    from .pipelines import train_method

    def run(params: dict, seed: int):
        bundle = dict(preset)
        if space.architecture and method in ("visual-only", "audio-only", "semantic-alignment"):
            bundle["networks"] = {**preset["networks"], **networks_from_params(params)}
        # sampled rates take precedence over fixed overrides
        kwargs = {**train_kwargs, "learning_rate": params["learning_rate"], "weight_decay": params["weight_decay"]}
        return train_method(method, split, bundle, seed=seed, **kwargs)

    return run


def trial_dict(record: TrialRecord) -> dict:
    return asdict(record)
