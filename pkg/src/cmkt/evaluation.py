"""Classification metrics, runtime measurement, top-k summaries, noise sweeps."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

VISUAL_SIGMAS = (0, 5, 10, 15, 20, 25)
AUDIO_SNRS = (math.inf, 70, 65, 60, 55, 50)


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def confusion(scores, labels, threshold: float = 0.5) -> ConfusionMatrix:
    """Positive class is defective (1); predict 1 iff score >= threshold."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if len(scores) == 0:
        raise ValueError("empty input")
    if len(scores) != len(labels):
        raise ValueError("scores and labels differ in length")
    pred = scores >= threshold
    pos = labels == 1
    return ConfusionMatrix(
        tp=int(np.sum(pred & pos)), tn=int(np.sum(~pred & ~pos)),
        fp=int(np.sum(pred & ~pos)), fn=int(np.sum(~pred & pos)),
    )


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise ValueError("accuracy of an empty confusion matrix")
    return (cm.tp + cm.tn) / cm.total


def balanced_accuracy(cm: ConfusionMatrix) -> float:
    if cm.tp + cm.fn == 0 or cm.tn + cm.fp == 0:
        raise ValueError("balanced accuracy needs both classes present")
    return (cm.tp / (cm.tp + cm.fn) + cm.tn / (cm.tn + cm.fp)) / 2


def auc_roc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative (ties 1/2)."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    pos, neg = scores[labels == 1], scores[labels != 1]
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("AUC-ROC needs both classes present")
    # rank-sum form of the Mann-Whitney statistic, average ranks for ties
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1
        i = j + 1
    u = ranks[labels == 1].sum() - len(pos) * (len(pos) + 1) / 2
    return float(u / (len(pos) * len(neg)))


@dataclass
class MetricsReport:
    confusion: ConfusionMatrix
    accuracy: float
    balanced_accuracy: float
    auc_roc: float
    training_runtime_s: float = 0.0
    prediction_runtime_s: float = 0.0
    tag: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        d["confusion"] = asdict(self.confusion)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        d = dict(d)
        d["confusion"] = ConfusionMatrix(**d["confusion"])
        return cls(**d)


def evaluate_scores(scores, labels, tag: str = "", training_runtime_s: float = 0.0,
                    prediction_runtime_s: float = 0.0) -> MetricsReport:
    """MetricsReport from predicted defect probabilities.

    Balanced accuracy and AUC fall back to NaN when a class is absent.
    """
    cm = confusion(scores, labels)
    try:
        bacc = balanced_accuracy(cm)
        auc = auc_roc(scores, labels)
    except ValueError:
        bacc = auc = float("nan")
    return MetricsReport(cm, accuracy(cm), bacc, auc, training_runtime_s, prediction_runtime_s, tag)


def measure_runtime(predict: Callable[[], object], n_items: int | None = None) -> float:
    """Wall-clock seconds of one call to ``predict`` after an untimed warm-up call.

    ``predict`` should run one full batched forward pass over the validation
    set. Pass ``n_items=0`` for an empty set; that returns 0 with a warning.
    """
    if n_items == 0:
        log.warning("empty validation set; prediction runtime reported as 0")
        return 0.0
    predict()
    start = time.perf_counter()
    predict()
    return time.perf_counter() - start


METRIC_NAMES = ("accuracy", "balanced_accuracy", "auc_roc", "training_runtime_s", "prediction_runtime_s")


def summarize_topk(reports: Sequence[MetricsReport]) -> dict[str, dict[str, float]]:
    """(mean, max, min) of each metric over a batch of retrained models."""
    if not reports:
        raise ValueError("no reports to summarize")
    out = {"count": {"mean": len(reports), "max": len(reports), "min": len(reports)}}
    for name in METRIC_NAMES:
        vals = np.array([getattr(r, name) for r in reports], dtype=np.float64)
        out[name] = {"mean": float(np.mean(vals)), "max": float(np.max(vals)), "min": float(np.min(vals))}
    return out


def write_summary_csv(summaries: Mapping[str, dict], path) -> Path:
    """One row per method: metric_mean, metric_max, metric_min columns."""
    path = Path(path)
    cols = [f"{m}_{s}" for m in METRIC_NAMES for s in ("mean", "max", "min")]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "count", *cols])
        for method, summ in summaries.items():
            w.writerow([method, summ["count"]["mean"],
                        *[f"{summ[m][s]:.6f}" for m in METRIC_NAMES for s in ("mean", "max", "min")]])
    return path


@dataclass
class NoiseSweepResult:
    """Test accuracy per (axis, level, method)."""

    rows: list[dict] = field(default_factory=list)

    def table(self, axis: str) -> dict[float, dict[str, float]]:
        out: dict[float, dict[str, float]] = {}
        for r in self.rows:
            if r["axis"] == axis:
                out.setdefault(r["level"], {})[r["method"]] = r["accuracy"]
        return out

    def write_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["axis", "level", "method", "seed", "accuracy"])
            w.writeheader()
            w.writerows(self.rows)
        return path


def noise_sweep(methods: Mapping[str, Callable], split, visual_sigmas: Iterable[float] = VISUAL_SIGMAS,
                audio_snrs: Iterable[float] = AUDIO_SNRS, seeds: Sequence[int] = (0,),
                noise_seed: int = 1234) -> NoiseSweepResult:
    """Retrain every method at every noise level and record its test accuracy.

    ``methods`` maps a name to ``fn(split, seed) -> test accuracy``; each fn
    carries its own fixed (optimal) configuration. Noise is applied to the
    train, validation and test parts alike, one modality at a time while the
    other stays clean.
    """
    if not methods:
        raise ValueError("no methods configured")
    result = NoiseSweepResult()
    axes = [("visual", s) for s in visual_sigmas] + [("audio", s) for s in audio_snrs]
    for axis, level in axes:
        corrupt = "with_visual_noise" if axis == "visual" else "with_audio_noise"
        parts = (split.train, split.validation, split.test)
        noisy = type(split)(*(getattr(p, corrupt)(level, noise_seed + k) for k, p in enumerate(parts)),
                            split.split_ratio)
        for name, fn in methods.items():
            for seed in seeds:
                acc = float(fn(noisy, seed))
                result.rows.append({"axis": axis, "level": level, "method": name, "seed": seed, "accuracy": acc})
                log.info("noise %s=%s %s seed %d: %.4f", axis, level, name, seed, acc)
    return result


def write_report(path, report: MetricsReport, config: dict, data_manifest: str | None = None) -> Path:
    """Structured per-run report: config hash, data manifest hash, confusion, metrics, runtimes."""
    from .util import config_hash

    path = Path(path)
    doc = {"config_hash": config_hash(config), "data_manifest": data_manifest, **report.to_dict()}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True))
    return path
