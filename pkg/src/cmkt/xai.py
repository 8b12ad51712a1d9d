"""LIME explanations on a fixed superpixel grid, plus the two audits built
on them: positive-mask overlap with a nozzle mask, and which spectrogram
rows (frequency ranges) the explanations highlight.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .diagnostics import KDE

log = logging.getLogger(__name__)

GRID = 8
IMAGE_SIZE = 80


@dataclass(frozen=True)
class SuperpixelMap:
    assignment: np.ndarray  # (H, W) ints in [0, n_segments)

    def __post_init__(self):
        a = np.asarray(self.assignment)
        ids = np.unique(a)
        if not np.array_equal(ids, np.arange(len(ids))):
            raise ValueError("superpixel ids must be contiguous from 0 and every superpixel nonempty")

    @property
    def n_segments(self) -> int:
        return int(self.assignment.max()) + 1

    def indicator(self) -> np.ndarray:
        """(S, H*W) boolean membership matrix."""
        flat = self.assignment.ravel()
        return flat[None, :] == np.arange(self.n_segments)[:, None]


def segment_grid(image, grid: int = GRID) -> SuperpixelMap:
    """Square superpixels on a ``grid`` x ``grid`` lattice, row-major ids."""
    h, w = np.shape(image)[-2:]
    if h % grid or w % grid:
        raise ValueError(f"image {h}x{w} does not divide into a {grid}x{grid} grid")
    rows = np.arange(h) // (h // grid)
    cols = np.arange(w) // (w // grid)
    return SuperpixelMap(rows[:, None] * grid + cols[None, :])


@dataclass
class Explanation:
    weights: np.ndarray
    intercept: float
    superpixel_map: SuperpixelMap
    fidelity: float
    index: int = -1

    def __post_init__(self):
        if len(self.weights) != self.superpixel_map.n_segments:
            raise ValueError("one weight per superpixel required")

    @property
    def n_positive(self) -> int:
        return int(np.sum(self.weights > 0))


def cosine_distance(x0: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """1 - cos(x0, x) for each row of ``xs``; a zero vector is at distance 1 (0 to itself)."""
    x0 = x0.ravel().astype(np.float64)
    xs = xs.reshape(len(xs), -1).astype(np.float64)
    n0, ns = np.linalg.norm(x0), np.linalg.norm(xs, axis=1)
    denom = n0 * ns
    cos = np.divide(xs @ x0, denom, out=np.zeros(len(xs)), where=denom > 0)
    cos[(n0 == 0) & (ns == 0)] = 1.0
    return 1.0 - cos


def weighted_ridge(Z: np.ndarray, y: np.ndarray, w: np.ndarray, alpha: float) -> tuple[np.ndarray, float]:
    """Closed-form weighted ridge; the intercept is not penalized."""
    X = np.column_stack([np.ones(len(Z)), Z])
    penalty = alpha * np.eye(X.shape[1])
    penalty[0, 0] = 0.0
    A = X.T @ (w[:, None] * X) + penalty
    theta = np.linalg.solve(A, X.T @ (w * y))
    return theta[1:], float(theta[0])


def lime_explain(predict_fn: Callable[[np.ndarray], np.ndarray], image, spmap: SuperpixelMap | None = None,
                 n_perturb: int = 1000, ridge_alpha: float = 1.0, kernel_width: float = 0.25, seed: int = 0,
                 replacement: float = 0.0, batched: bool = True) -> Explanation:
    """Explain ``predict_fn`` at ``image`` with a weighted ridge surrogate.

    ``predict_fn`` returns the defect probability; with ``batched`` it takes
    an (N, H, W) stack and returns N values, otherwise one image at a time.
    Row 0 of the perturbation design is always the unperturbed image.
    """
    image = np.asarray(image, dtype=np.float64)
    spmap = spmap if spmap is not None else segment_grid(image)
    S = spmap.n_segments
    rng = np.random.default_rng(seed)
    Z = rng.random((n_perturb, S)) < 0.5
    Z[0] = True
    if n_perturb < 2 or np.all(Z == Z[0]):
        raise ValueError("degenerate perturbation set: all samples identical")
    keep = Z.astype(np.float64) @ spmap.indicator()  # (N, H*W) 0/1
    perturbed = (image.ravel() * keep + replacement * (1 - keep)).reshape(n_perturb, *image.shape)
    if batched:
        y = np.asarray(predict_fn(perturbed), dtype=np.float64).reshape(-1)
    else:
        y = np.array([float(np.asarray(predict_fn(p)).reshape(-1)[0]) for p in perturbed])
    if len(y) != n_perturb:
        raise ValueError(f"predict_fn returned {len(y)} values for {n_perturb} inputs")
    d = cosine_distance(image, perturbed)
    pi = np.exp(-(d**2) / kernel_width**2)
    Zf = Z.astype(np.float64)
    weights, intercept = weighted_ridge(Zf, y, pi, ridge_alpha)
    fitted = intercept + Zf @ weights
    ybar = np.sum(pi * y) / np.sum(pi)
    ss_tot = np.sum(pi * (y - ybar) ** 2)
    # outputs constant up to round-off: the intercept alone is an exact fit
    if ss_tot <= 1e-12 * max(np.sum(pi * y**2), np.finfo(float).tiny):
        fidelity = 1.0
    else:
        fidelity = 1.0 - np.sum(pi * (y - fitted) ** 2) / ss_tot
    return Explanation(weights, intercept, spmap, float(fidelity))


def positive_mask(expl: Explanation, k: int = 5) -> np.ndarray:
    """Union of the ``k`` highest positive-weight superpixels (ties: lower id first)."""
    w = np.asarray(expl.weights)
    order = np.lexsort((np.arange(len(w)), -w))
    chosen = [i for i in order[:k] if w[i] > 0]
    if not chosen:
        log.warning("no positively weighted superpixel; positive mask is empty")
    return np.isin(expl.superpixel_map.assignment, chosen)


def mask_intersection_count(p, q) -> int:
    p, q = np.asarray(p, dtype=bool), np.asarray(q, dtype=bool)
    if p.shape != q.shape:
        raise ValueError(f"mask shape mismatch: {p.shape} vs {q.shape}")
    return int(np.sum(p & q))


@dataclass
class IntersectionResult:
    counts: np.ndarray
    density: KDE | None
    explanations: list[Explanation]

    @property
    def mean(self) -> float:
        return float(np.mean(self.counts))


def _as_predict_fn(model) -> Callable[[np.ndarray], np.ndarray]:
    if hasattr(model, "predict_inputs"):
        return model.predict_inputs
    return model


def explain_many(model, images: np.ndarray, seed: int = 0, **lime_kwargs) -> list[Explanation]:
    """One explanation per image; image ``i`` uses seed ``seed + i``."""
    fn = _as_predict_fn(model)
    out = []
    for i, img in enumerate(images):
        e = lime_explain(fn, img, seed=seed + i, **lime_kwargs)
        e.index = i
        out.append(e)
    return out


def intersection_distribution(model, images: np.ndarray, nozzle_mask, k: int = 5, seed: int = 0,
                              explanations: Sequence[Explanation] | None = None, **lime_kwargs) -> IntersectionResult:
    """Per-image overlap of the positive mask with the nozzle mask, plus a KDE of the counts."""
    if len(images) == 0:
        raise ValueError("empty image set")
    expls = list(explanations) if explanations is not None else explain_many(model, images, seed, **lime_kwargs)
    counts = np.array([mask_intersection_count(positive_mask(e, k), nozzle_mask) for e in expls])
    density = KDE(counts) if len(counts) >= 2 else None
    return IntersectionResult(counts, density, expls)


def frequency_histogram(masks: Iterable[np.ndarray]) -> np.ndarray:
    """counts[r] = number of masks with any pixel in spectrogram row r."""
    counts = np.zeros(IMAGE_SIZE, dtype=np.int64)
    for m in masks:
        m = np.asarray(m, dtype=bool)
        counts[: m.shape[0]] += m.any(axis=1)
    return counts


def frequency_histogram_by_class(masks: Sequence[np.ndarray], labels) -> dict[int, np.ndarray]:
    labels = np.asarray(labels)
    return {c: frequency_histogram(m for m, y in zip(masks, labels) if y == c) for c in (0, 1)}


# --- persistence ----------------------------------------------------------

def read_mask(path) -> np.ndarray:
    """80x80 binary mask from a PNG (nonzero = set) or a whitespace text grid of 0/1."""
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image

        arr = np.asarray(Image.open(path).convert("L")) > 0
    else:
        arr = np.loadtxt(path, dtype=int, ndmin=2) != 0
    if arr.shape != (IMAGE_SIZE, IMAGE_SIZE):
        raise ValueError(f"{path}: mask must be {IMAGE_SIZE}x{IMAGE_SIZE}, got {arr.shape}")
    return arr


def write_mask(mask, path) -> Path:
    path = Path(path)
    mask = np.asarray(mask, dtype=bool)
    if path.suffix.lower() == ".png":
        from PIL import Image

        Image.fromarray(mask.astype(np.uint8) * 255).save(path)
    else:
        np.savetxt(path, mask.astype(int), fmt="%d")
    return path


def rle_encode(mask) -> list[list[int]]:
    """[start, length] runs of set pixels in the row-major flattened mask."""
    flat = np.concatenate([[0], np.asarray(mask, dtype=np.int8).ravel(), [0]])
    edges = np.flatnonzero(np.diff(flat))
    return [[int(s), int(e - s)] for s, e in zip(edges[::2], edges[1::2])]


def rle_decode(runs, shape=(IMAGE_SIZE, IMAGE_SIZE)) -> np.ndarray:
    flat = np.zeros(int(np.prod(shape)), dtype=bool)
    for start, length in runs:
        flat[start : start + length] = True
    return flat.reshape(shape)


def dump_explanations(expls: Sequence[Explanation], path, k: int = 5) -> Path:
    """One JSON record per line: index, weights, intercept, fidelity, positive-mask RLE."""
    path = Path(path)
    with open(path, "w") as fh:
        for e in expls:
            rec = {"index": e.index, "weights": [float(w) for w in e.weights], "intercept": e.intercept,
                   "fidelity": e.fidelity, "n_positive": e.n_positive, "mask_rle": rle_encode(positive_mask(e, k))}
            fh.write(json.dumps(rec) + "\n")
    return path


def load_explanation_dump(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
