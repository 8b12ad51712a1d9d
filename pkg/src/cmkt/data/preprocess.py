"""Signal preprocessing for the paired melt-pool image / audio data.

Visual frames are grayscaled and block-averaged from 480x480x3 to 80x80.
Audio is cut into 33.3 ms snippets (1470 samples at 44.1 kHz) and turned
into 80x80 linear-frequency spectrograms.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.signal import get_window

SAMPLE_RATE = 44100
FPS = 30
SNIPPET_LEN = SAMPLE_RATE // FPS  # 1470
RAW_FRAME_SHAPE = (480, 480, 3)
IMAGE_SIZE = 80

N_FFT = 160
HOP = 16
N_BINS = 80
N_FRAMES = 80
DB_FLOOR = -80.0
BIN_HZ = SAMPLE_RATE / N_FFT  # 275.625

LUMA = np.array([0.299, 0.587, 0.114])


def grayscale_resize(frame: np.ndarray) -> np.ndarray:
    """480x480x3 RGB in [0, 255] -> 80x80 grayscale in [0, 1]."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != RAW_FRAME_SHAPE:
        raise ValueError(f"expected frame of shape {RAW_FRAME_SHAPE}, got {frame.shape}")
    gray = frame @ LUMA
    block = RAW_FRAME_SHAPE[0] // IMAGE_SIZE
    out = gray.reshape(IMAGE_SIZE, block, IMAGE_SIZE, block).mean(axis=(1, 3))
    return np.clip(out / 255.0, 0.0, 1.0)


def segment_audio(waveform: np.ndarray, sr: int = SAMPLE_RATE, fps: int = FPS) -> np.ndarray:
    """Cut a waveform into consecutive non-overlapping snippets.

    Returns an array of shape (floor(len / snippet_len), snippet_len); the
    trailing partial window is dropped.
    """
    waveform = np.asarray(waveform, dtype=np.float64).ravel()
    size = int(round(sr / fps))
    count = len(waveform) // size
    if count == 0:
        raise ValueError(f"waveform of length {len(waveform)} is shorter than one snippet ({size})")
    return waveform[: count * size].reshape(count, size).copy()


_WINDOW = get_window("hann", N_FFT)


def make_spectrograms(snippets: np.ndarray) -> np.ndarray:
    """Batched version of :func:`make_spectrogram`: (n, 1470) -> (n, 80, 80).

    Row r of each image holds frequency bin r (r * 275.625 Hz), so row 0 is
    the lowest frequency.
    """
    snippets = np.asarray(snippets, dtype=np.float64)
    if snippets.ndim != 2 or snippets.shape[1] != SNIPPET_LEN:
        raise ValueError(f"expected snippets of shape (n, {SNIPPET_LEN}), got {snippets.shape}")
    frames = np.lib.stride_tricks.sliding_window_view(snippets, N_FFT, axis=1)[:, ::HOP]
    mag = np.abs(np.fft.rfft(frames * _WINDOW, axis=-1))[..., :N_BINS]  # (n, 82, 80)
    crop = (mag.shape[1] - N_FRAMES) // 2
    mag = mag[:, crop : crop + N_FRAMES].transpose(0, 2, 1)  # (n, freq, time)

    peak = mag.max(axis=(1, 2), keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        db = 20.0 * np.log10(mag / peak)
    db = np.where(peak > 0, db, DB_FLOOR)
    db = np.clip(np.nan_to_num(db, nan=DB_FLOOR, neginf=DB_FLOOR), DB_FLOOR, 0.0)
    return (db - DB_FLOOR) / -DB_FLOOR


def make_spectrogram(snippet: np.ndarray) -> np.ndarray:
    """Linear-frequency 80x80 spectrogram of one 1470-sample snippet, in [0, 1].

    STFT with a 160-point Hann window and hop 16 (82 frames, center-cropped to
    80); the first 80 one-sided bins are kept. Magnitudes are converted to dB
    relative to the snippet maximum, clipped to [-80, 0] and rescaled.
    """
    return make_spectrograms(np.asarray(snippet)[None])[0]


def frequency_range(row: int) -> tuple[float, float]:
    """Frequency interval (Hz) covered by spectrogram row ``row``."""
    if not 0 <= row < N_BINS:
        raise IndexError(row)
    return row * BIN_HZ, (row + 1) * BIN_HZ


def add_visual_awgn(frames: np.ndarray, sigma: float, seed: int | None = None) -> np.ndarray:
    """Additive white Gaussian noise on [0, 1] images, sigma in 0-255 pixel units.

    Works on a single frame or a stack of frames.
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    frames = np.asarray(frames, dtype=np.float64)
    if sigma == 0:
        return frames.copy()
    rng = np.random.default_rng(seed)
    noisy = frames * 255.0 + rng.normal(0.0, sigma, size=frames.shape)
    return np.clip(noisy, 0.0, 255.0) / 255.0


def add_audio_awgn(snippets: np.ndarray, snr_db: float, seed: int | None = None) -> np.ndarray:
    """Additive white Gaussian noise at a target SNR (dB) on raw waveforms.

    Signal power is the mean squared sample value of each snippet, so a
    stack of snippets gets per-snippet noise levels. ``snr_db = inf`` is the
    identity.
    """
    snippets = np.asarray(snippets, dtype=np.float64)
    if math.isinf(snr_db) and snr_db > 0:
        return snippets.copy()
    power = np.mean(snippets**2, axis=-1, keepdims=True)
    if np.any(power == 0):
        raise ValueError("SNR is undefined for a zero-power snippet")
    noise_std = np.sqrt(power / 10.0 ** (snr_db / 10.0))
    rng = np.random.default_rng(seed)
    return snippets + rng.normal(size=snippets.shape) * noise_std
