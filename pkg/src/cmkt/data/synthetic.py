"""Desk-scale synthetic paired image/audio data with a shared latent.

Each sample draws a class-dependent latent ``z``. The visual frame is a
bright centered blob whose radius grows with ``z``; the audio snippet is the
sum of two tones whose amplitude balance follows ``z``. The visual modality
also carries a bright arc near the bottom edge (a stand-in for the nozzle
reflection). Its brightness is fixed by default; with jitter it varies per
sample, optionally correlated with the label so that it becomes a
shortcut cue present in only one modality. Each modality gets its own
Gaussian noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .preprocess import IMAGE_SIZE, SAMPLE_RATE, SNIPPET_LEN, make_spectrograms
from .samples import PairedSet

LOW_TONE_HZ = 2756.25  # bin 10
HIGH_TONE_HZ = 13781.25  # bin 50
RING_RADII = (33.0, 38.0)
RING_TOP_ROW = 68  # the nuisance arc occupies rows >= this, clear of the blob and tone rows
MAX_BLOB_RADIUS = 26.0


@dataclass
class SyntheticConfig:
    n_samples: int = 2000
    seed: int = 0
    shared_signal_strength: float = 1.5  # classes separable in z iff > 1
    visual_nuisance_strength: float = 0.0
    visual_noise_std: float = 0.0
    audio_noise_std: float = 0.0
    class_ratio: float = 0.25  # fraction of defect-free samples
    nuisance_jitter: float = 0.0  # ring brightness = strength * (1 - jitter * w)
    nuisance_label_correlation: float = 0.0  # w = (1 - rho) * U(0, 1) + rho * (1 - label)

    def __post_init__(self):
        if min(self.shared_signal_strength, self.visual_nuisance_strength,
               self.visual_noise_std, self.audio_noise_std) < 0:
            raise ValueError("strengths and noise levels must be non-negative")
        if not 0 <= self.nuisance_jitter <= 1:
            raise ValueError("nuisance_jitter must lie in [0, 1]")
        if not 0 <= self.nuisance_label_correlation <= 1:
            raise ValueError("nuisance_label_correlation must lie in [0, 1]")
        if not 0 < self.class_ratio < 1:
            raise ValueError("class_ratio must lie in (0, 1)")
        if self.n_samples < 1:
            raise ValueError("n_samples must be positive")


def _radial_grid() -> np.ndarray:
    c = (IMAGE_SIZE - 1) / 2.0
    yy, xx = np.mgrid[:IMAGE_SIZE, :IMAGE_SIZE]
    return np.hypot(yy - c, xx - c)


def ring_profile() -> np.ndarray:
    """Unit-amplitude intensity of the nuisance arc (lower part of a ring), 80x80."""
    r = _radial_grid()
    inner, outer = RING_RADII
    ring = np.clip(np.minimum(r - inner, outer - r) + 0.5, 0.0, 1.0)
    ring[:RING_TOP_ROW] = 0.0
    return ring


def nozzle_ring_mask() -> np.ndarray:
    """Boolean 80x80 mask of the pixels lit by the synthetic nuisance ring."""
    return ring_profile() > 0


def blob_radius(z: np.ndarray) -> np.ndarray:
    return 14.0 + 4.0 * np.asarray(z)


def generate_synthetic(cfg: SyntheticConfig) -> PairedSet:
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_samples
    n_free = int(round(cfg.class_ratio * n))
    labels = np.ones(n, dtype=np.int64)
    labels[:n_free] = 0
    labels = rng.permutation(labels)

    s = cfg.shared_signal_strength
    z = s * (2 * labels - 1) + rng.uniform(-1.0, 1.0, size=n)
    zmax = s + 1.0

    # visual: anti-aliased disk + ring + noise
    r = _radial_grid()[None]
    radius = np.clip(blob_radius(z), 1.0, MAX_BLOB_RADIUS)[:, None, None]
    visual = np.clip(radius - r + 0.5, 0.0, 1.0)
    if cfg.visual_nuisance_strength > 0:
        amp = np.full(n, cfg.visual_nuisance_strength)
        if cfg.nuisance_jitter > 0:
            rho = cfg.nuisance_label_correlation
            w = (1.0 - rho) * rng.uniform(0.0, 1.0, size=n) + rho * (1 - labels)
            amp = amp * (1.0 - cfg.nuisance_jitter * w)
        visual = np.maximum(visual, amp[:, None, None] * ring_profile()[None])
    if cfg.visual_noise_std > 0:
        visual = visual + rng.normal(0.0, cfg.visual_noise_std, size=visual.shape)
    visual = np.clip(visual, 0.0, 1.0)

    # audio: two tones with z-dependent balance + noise
    t = np.arange(SNIPPET_LEN) / SAMPLE_RATE
    balance = 0.5 * (1.0 + z / zmax)  # in [0, 1]
    phases = rng.uniform(0, 2 * np.pi, size=(n, 2))
    audio = (
        (0.1 + 0.9 * balance)[:, None] * np.sin(2 * np.pi * LOW_TONE_HZ * t + phases[:, :1])
        + (1.0 - 0.9 * balance)[:, None] * np.sin(2 * np.pi * HIGH_TONE_HZ * t + phases[:, 1:])
    )
    if cfg.audio_noise_std > 0:
        audio = audio + rng.normal(0.0, cfg.audio_noise_std, size=audio.shape)

    return PairedSet(
        visual=visual,
        audio_spec=make_spectrograms(audio),
        labels=labels,
        index=np.arange(n),
        audio_raw=audio,
    )
