"""Encoded-space diagnostics: maximum mean discrepancy, KDE, encoding export."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .models import EncodedBatch

log = logging.getLogger(__name__)


def median_bandwidth(X: np.ndarray, Y: np.ndarray) -> float:
    """Median pairwise Euclidean distance over the pooled sample."""
    pooled = np.concatenate([X, Y])
    d = pdist(pooled)
    d = d[d > 0]
    return float(np.median(d)) if len(d) else 1.0


def rbf_kernel(bandwidth: float) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    def k(a, b):
        return np.exp(-cdist(a, b, "sqeuclidean") / (2 * bandwidth**2))
    return k


def linear_kernel(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b.T


def mmd(X, Y, kernel: str | Callable = "rbf", bandwidth: float | None = None) -> float:
    """Biased (V-statistic) MMD estimate; negative radicands clamp to 0.

    ``kernel`` is "rbf" (Gaussian, median-heuristic bandwidth unless given),
    "linear", or a callable returning the Gram matrix of two row sets.
    """
    X = np.asarray(X, dtype=np.float64).reshape(len(X), -1)
    Y = np.asarray(Y, dtype=np.float64).reshape(len(Y), -1)
    if len(X) == 0 or len(Y) == 0:
        raise ValueError("mmd needs nonempty samples")
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"feature dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    if kernel == "rbf":
        kernel = rbf_kernel(bandwidth or median_bandwidth(X, Y))
    elif kernel == "linear":
        kernel = linear_kernel
    sq = kernel(X, X).mean() + kernel(Y, Y).mean() - 2 * kernel(X, Y).mean()
    return float(np.sqrt(max(sq, 0.0)))


@dataclass
class GroupMMDs:
    d_A: float  # audio defect-free vs defective
    d_V: float  # visual defect-free vs defective
    d_VA_defectfree: float
    d_VA_defective: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def group_mmds(ev: EncodedBatch, ea: EncodedBatch, kernel: str | Callable = "rbf",
               shared_bandwidth: bool = False) -> GroupMMDs:
    """The four class/modality group discrepancies of one encoding snapshot.

    With ``shared_bandwidth`` the RBF bandwidth is the median distance over
    all pooled encodings instead of per pair, so the four values share one
    scale and stay comparable across snapshots of a run.
    """
    zv, yv = np.asarray(ev.vectors), np.asarray(ev.labels)
    za, ya = np.asarray(ea.vectors), np.asarray(ea.labels)
    groups = {"v0": zv[yv == 0], "v1": zv[yv == 1], "a0": za[ya == 0], "a1": za[ya == 1]}
    empty = [k for k, g in groups.items() if len(g) == 0]
    if empty:
        raise ValueError(f"empty group(s): {empty}")
    bw = median_bandwidth(zv.reshape(len(zv), -1), za.reshape(len(za), -1)) if shared_bandwidth else None
    return GroupMMDs(
        d_A=mmd(groups["a0"], groups["a1"], kernel, bw),
        d_V=mmd(groups["v0"], groups["v1"], kernel, bw),
        d_VA_defectfree=mmd(groups["v0"], groups["a0"], kernel, bw),
        d_VA_defective=mmd(groups["v1"], groups["a1"], kernel, bw),
    )


def silverman_bandwidth(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=np.float64)
    std = values.std(ddof=1)
    iqr = np.subtract(*np.percentile(values, [75, 25]))
    spread = min(std, iqr / 1.34) if iqr > 0 else std
    return float(0.9 * spread * len(values) ** (-0.2))


class KDE:
    """Gaussian kernel density estimate, callable on query points."""

    def __init__(self, values, bandwidth: float | None = None):
        self.values = np.asarray(values, dtype=np.float64).ravel()
        if len(self.values) < 2:
            raise ValueError("kde needs at least 2 values")
        if bandwidth is None:
            bandwidth = silverman_bandwidth(self.values)
            if bandwidth <= 0:
                log.warning("degenerate sample (no spread); using bandwidth 1")
                bandwidth = 1.0
        self.bandwidth = float(bandwidth)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        u = (x[..., None] - self.values) / self.bandwidth
        return np.exp(-0.5 * u**2).sum(-1) / (len(self.values) * self.bandwidth * np.sqrt(2 * np.pi))

    @property
    def mean(self) -> float:
        return float(self.values.mean())


def kde(values, bandwidth: float | None = None) -> KDE:
    return KDE(values, bandwidth)


def snapshot_epochs(epochs: int, every: int, include_first: bool = False) -> list[int]:
    """Epochs (1-based) at which encodings are logged: every N-th, optionally also the first."""
    if every < 1:
        raise ValueError("snapshot interval must be at least 1")
    return sorted({*([1] if include_first else []), *range(every, epochs + 1, every)})


def export_encodings(encoder, data, epoch_tag, out_dir, batch_size: int = 512) -> list[Path]:
    """Write the labeled encodings of both modalities of ``data``.

    One text file per modality, ``encodings_<tag>_<modality>.csv``::

        # epoch=<tag> modality=<m> dim=<d> count=<n>
        label,v0,v1,...
    """
    from .models import encode

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for modality in ("visual", "audio"):
        eb = encode(encoder, data.modality(modality), data.labels, modality, batch_size)
        path = out_dir / f"encodings_{epoch_tag}_{modality}.csv"
        vecs = np.asarray(eb.vectors)
        header = f"epoch={epoch_tag} modality={modality} dim={vecs.shape[1]} count={len(vecs)}"
        rows = np.column_stack([np.asarray(eb.labels, dtype=np.float64), vecs])
        np.savetxt(path, rows, delimiter=",", fmt=["%d"] + ["%.8g"] * vecs.shape[1], header=header)
        paths.append(path)
    return paths


def load_encodings(path) -> EncodedBatch:
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().lstrip("# ").split()
    meta = dict(item.split("=", 1) for item in header)
    rows = np.loadtxt(path, delimiter=",", ndmin=2)
    dim = int(meta["dim"])
    if len(rows) == 0:
        rows = np.zeros((0, dim + 1))
    return EncodedBatch(rows[:, 1:], rows[:, 0].astype(int), meta["modality"])
