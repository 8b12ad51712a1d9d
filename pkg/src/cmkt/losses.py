"""Scalar objectives: contrastive semantic alignment, weighted BCE, MSE.

All functions take torch tensors (numpy arrays are converted) and return a
0-dim tensor, so they can be used both for training and for checking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .models import EncodedBatch

PROB_EPS = 1e-7


@dataclass
class CCSAConfig:
    margin: float = 1.0
    tradeoff: float = 0.5
    class_weights: tuple[float, float] = (1.5, 0.5)  # (defect-free, defective)

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if not 0 <= self.tradeoff <= 1:
            raise ValueError("tradeoff must lie in [0, 1]")
        if min(self.class_weights) <= 0:
            raise ValueError("class weights must be positive")


def class_weights(ratio: float = 3.0) -> tuple[float, float]:
    """(w_defect_free, w_defective) with w_free / w_defective = ratio and mean 1."""
    w_def = 2.0 / (1.0 + ratio)
    return (ratio * w_def, w_def)


def _t(x, like: torch.Tensor | None = None) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    dtype = like.dtype if like is not None else torch.float64
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def pair_distance(u, v) -> torch.Tensor:
    """Half squared Euclidean distance."""
    u, v = _t(u), _t(v)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {tuple(u.shape)} vs {tuple(v.shape)}")
    return ((u - v) ** 2).sum() / 2


def pair_similarity(u, v, margin: float) -> torch.Tensor:
    """Half squared hinge on the margin shortfall, max(0, m - |u - v|)^2 / 2."""
    u, v = _t(u), _t(v)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {tuple(u.shape)} vs {tuple(v.shape)}")
    dist = torch.sqrt(((u - v) ** 2).sum())
    return torch.clamp(margin - dist, min=0) ** 2 / 2


def _cross_sq_dists(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    a = a.reshape(len(a), -1)
    b = b.reshape(len(b), -1)
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2 * a @ b.T
    return sq.clamp(min=0)


def _unpack(ev: EncodedBatch, ea: EncodedBatch):
    if len(ev.vectors) == 0 or len(ea.vectors) == 0:
        raise ValueError("empty batch")
    zv = _t(ev.vectors)
    za = _t(ea.vectors, zv)
    yv = torch.as_tensor(np.asarray(ev.labels) if not isinstance(ev.labels, torch.Tensor) else ev.labels)
    ya = torch.as_tensor(np.asarray(ea.labels) if not isinstance(ea.labels, torch.Tensor) else ea.labels)
    return zv, za, yv, ya


def semantic_alignment_loss(ev: EncodedBatch, ea: EncodedBatch) -> torch.Tensor:
    """Mean half squared distance over all same-label cross-modal pairs (0 if none)."""
    zv, za, yv, ya = _unpack(ev, ea)
    same = yv[:, None] == ya[None, :]
    if not same.any():
        return zv.sum() * 0
    return (_cross_sq_dists(zv, za)[same] / 2).mean()


def separation_loss(ev: EncodedBatch, ea: EncodedBatch, margin: float) -> torch.Tensor:
    """Mean margin hinge over all different-label cross-modal pairs (0 if none)."""
    zv, za, yv, ya = _unpack(ev, ea)
    diff = yv[:, None] != ya[None, :]
    if not diff.any():
        return zv.sum() * 0
    sq = _cross_sq_dists(zv, za)[diff]
    # clamp keeps sqrt differentiable at coincident points
    dist = torch.sqrt(sq.clamp(min=1e-12))
    return (torch.clamp(margin - dist, min=0) ** 2 / 2).mean()


def weighted_bce(probs, labels, weights: tuple[float, float] = (1.0, 1.0)) -> torch.Tensor:
    """Class-weighted binary cross entropy, averaged over samples."""
    p = _t(probs).reshape(-1)
    y = _t(labels, p).reshape(-1)
    if not torch.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    p = p.clamp(PROB_EPS, 1 - PROB_EPS)
    w = torch.where(y == 1, torch.as_tensor(weights[1], dtype=p.dtype), torch.as_tensor(weights[0], dtype=p.dtype))
    return (w * -(y * torch.log(p) + (1 - y) * torch.log(1 - p))).mean()


def mean_classification_loss(loss_visual, loss_audio):
    return (loss_visual + loss_audio) / 2


def ccsa_loss(l_sa, l_s, l_c, tradeoff: float):
    """(1 - gamma) * (L_SA + L_S) + gamma * L_C."""
    if not 0 <= tradeoff <= 1:
        raise ValueError("tradeoff must lie in [0, 1]")
    if tradeoff == 1:
        return l_c
    if tradeoff == 0:
        return l_sa + l_s
    return (1 - tradeoff) * (l_sa + l_s) + tradeoff * l_c


def mse(a, b) -> torch.Tensor:
    a = _t(a)
    b = _t(b, a)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return ((a - b) ** 2).mean()
