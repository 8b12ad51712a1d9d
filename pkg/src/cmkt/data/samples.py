"""Paired samples, column-stored sample sets and the 8:1:1 split."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .preprocess import add_audio_awgn, add_visual_awgn, make_spectrograms

DEFECT_FREE = 0
DEFECTIVE = 1
MODALITIES = ("visual", "audio")


@dataclass(frozen=True)
class PairedSample:
    """One synchronized (melt-pool image, audio snippet) pair sharing one label."""

    visual: np.ndarray  # 80x80 in [0, 1]
    audio_raw: np.ndarray | None  # 1470 samples
    audio_spec: np.ndarray  # 80x80 in [0, 1]
    label: int
    index: int


@dataclass
class PairedSet:
    """A set of paired samples stored column-wise for batched training.

    ``audio_raw`` may be absent when only spectrograms were cached; noise
    corruption of the audio modality then is unavailable.
    """

    visual: np.ndarray
    audio_spec: np.ndarray
    labels: np.ndarray
    index: np.ndarray = None
    audio_raw: np.ndarray | None = None

    def __post_init__(self):
        self.visual = np.asarray(self.visual, dtype=np.float32)
        self.audio_spec = np.asarray(self.audio_spec, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = len(self.labels)
        if self.index is None:
            self.index = np.arange(n)
        self.index = np.asarray(self.index, dtype=np.int64)
        if self.audio_raw is not None:
            self.audio_raw = np.asarray(self.audio_raw, dtype=np.float64)
        for name in ("visual", "audio_spec", "index", "audio_raw"):
            arr = getattr(self, name)
            if arr is not None and len(arr) != n:
                raise ValueError(f"{name} has {len(arr)} rows, labels has {n}")
        if n and not np.isin(self.labels, (DEFECT_FREE, DEFECTIVE)).all():
            raise ValueError("labels must be 0 (defect-free) or 1 (defective)")

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> PairedSample:
        return PairedSample(
            visual=self.visual[i],
            audio_raw=None if self.audio_raw is None else self.audio_raw[i],
            audio_spec=self.audio_spec[i],
            label=int(self.labels[i]),
            index=int(self.index[i]),
        )

    def __iter__(self) -> Iterator[PairedSample]:
        return (self[i] for i in range(len(self)))

    def modality(self, name: str) -> np.ndarray:
        if name == "visual":
            return self.visual
        if name == "audio":
            return self.audio_spec
        raise ValueError(f"unknown modality {name!r}")

    def subset(self, rows) -> "PairedSet":
        rows = np.asarray(rows)
        return PairedSet(
            visual=self.visual[rows],
            audio_spec=self.audio_spec[rows],
            labels=self.labels[rows],
            index=self.index[rows],
            audio_raw=None if self.audio_raw is None else self.audio_raw[rows],
        )

    @classmethod
    def from_samples(cls, samples: Sequence[PairedSample]) -> "PairedSet":
        samples = list(samples)
        raw = None
        if samples and all(s.audio_raw is not None for s in samples):
            raw = np.stack([s.audio_raw for s in samples])
        return cls(
            visual=np.stack([s.visual for s in samples]) if samples else np.zeros((0, 80, 80)),
            audio_spec=np.stack([s.audio_spec for s in samples]) if samples else np.zeros((0, 80, 80)),
            labels=np.array([s.label for s in samples], dtype=np.int64),
            index=np.array([s.index for s in samples], dtype=np.int64),
            audio_raw=raw,
        )

    def with_visual_noise(self, sigma: float, seed: int | None = None) -> "PairedSet":
        out = self.subset(np.arange(len(self)))
        out.visual = add_visual_awgn(self.visual, sigma, seed).astype(np.float32)
        return out

    def with_audio_noise(self, snr_db: float, seed: int | None = None) -> "PairedSet":
        """Corrupt the raw waveforms and regenerate the spectrograms."""
        if self.audio_raw is None:
            raise ValueError("audio noise needs raw snippets; this set only holds spectrograms")
        out = self.subset(np.arange(len(self)))
        if np.isinf(snr_db):
            return out
        out.audio_raw = add_audio_awgn(self.audio_raw, snr_db, seed)
        out.audio_spec = make_spectrograms(out.audio_raw).astype(np.float32)
        return out


@dataclass
class DatasetSplit:
    train: PairedSet
    validation: PairedSet
    test: PairedSet
    split_ratio: tuple[int, int, int] = field(default=(8, 1, 1))

    def parts(self) -> dict[str, PairedSet]:
        return {"train": self.train, "validation": self.validation, "test": self.test}

    def map(self, fn) -> "DatasetSplit":
        return DatasetSplit(fn(self.train), fn(self.validation), fn(self.test), self.split_ratio)


def split_sizes(n: int, ratio: tuple[int, int, int] = (8, 1, 1)) -> tuple[int, int, int]:
    """train = round(0.8 n), val = round(0.1 n), test = the remainder."""
    if n < 3:
        raise ValueError("need at least 3 samples to split")
    total = sum(ratio)
    n_train = int(round(n * ratio[0] / total))
    n_val = int(round(n * ratio[1] / total))
    return n_train, n_val, n - n_train - n_val


def split_dataset(samples, ratio: tuple[int, int, int] = (8, 1, 1), seed: int = 0) -> DatasetSplit:
    """Seeded shuffle of sample indices into disjoint train/validation/test parts."""
    data = samples if isinstance(samples, PairedSet) else PairedSet.from_samples(samples)
    n_train, n_val, _ = split_sizes(len(data), ratio)
    order = np.random.default_rng(seed).permutation(len(data))
    return DatasetSplit(
        train=data.subset(order[:n_train]),
        validation=data.subset(order[n_train : n_train + n_val]),
        test=data.subset(order[n_train + n_val :]),
        split_ratio=tuple(ratio),
    )
