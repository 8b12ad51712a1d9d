import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.signal import get_window

from cmkt.data import (
    BIN_HZ, SNIPPET_LEN, PairedSample, PairedSet, SyntheticConfig, add_audio_awgn, add_visual_awgn,
    frequency_range, generate_synthetic, grayscale_resize, make_spectrogram, make_spectrograms, segment_audio,
    split_dataset, split_sizes,
)
from cmkt.data.preprocess import SAMPLE_RATE


def tone(freq, amp=1.0, n=SNIPPET_LEN, phase=0.0):
    t = np.arange(n) / SAMPLE_RATE
    return amp * np.sin(2 * np.pi * freq * t + phase)


# --- grayscale / resize ---------------------------------------------------

def test_white_and_black_frames():
    assert np.array_equal(grayscale_resize(np.full((480, 480, 3), 255.0)), np.ones((80, 80)))
    assert np.array_equal(grayscale_resize(np.zeros((480, 480, 3))), np.zeros((80, 80)))


def test_checkerboard_of_blocks_averages_to_half():
    # pixel checkerboard: every 6x6 resize block holds 18 black and 18 white pixels
    cell = np.indices((480, 480)).sum(0) % 2
    frame = np.repeat(cell[:, :, None] * 255.0, 3, axis=2)
    out = grayscale_resize(frame)
    # brute-force block mean oracle
    gray = frame @ np.array([0.299, 0.587, 0.114])
    oracle = np.array([[gray[6 * i : 6 * i + 6, 6 * j : 6 * j + 6].mean() for j in range(80)] for i in range(80)]) / 255
    np.testing.assert_allclose(out, oracle, atol=1e-12)
    np.testing.assert_allclose(out, 0.5, atol=1e-12)


def test_wrong_frame_shape():
    with pytest.raises(ValueError):
        grayscale_resize(np.zeros((480, 479, 3)))


# --- segmentation ---------------------------------------------------------

def test_segment_counts():
    assert len(segment_audio(np.zeros(6_387_150))) == 4345
    x = np.arange(1470.0)
    segs = segment_audio(x)
    assert segs.shape == (1, 1470) and np.array_equal(segs[0], x)
    segs = segment_audio(np.arange(2941.0))
    assert segs.shape == (2, 1470) and segs[-1, -1] == 2939.0


def test_short_waveform_errors():
    with pytest.raises(ValueError):
        segment_audio(np.zeros(1469))


@given(st.integers(1470, 20_000))
@settings(max_examples=30, deadline=None)
def test_segment_floor_rule(n):
    count = len(segment_audio(np.zeros(n)))
    assert count * 1470 <= n < (count + 1) * 1470


# --- spectrogram ----------------------------------------------------------

def test_silence_gives_zeros():
    assert np.array_equal(make_spectrogram(np.zeros(SNIPPET_LEN)), np.zeros((80, 80)))


@pytest.mark.parametrize("freq,row", [(5512.5, 20), (11025.0, 40), (2756.25, 10), (13781.25, 50)])
def test_tone_peaks_at_its_row(freq, row):
    spec = make_spectrogram(tone(freq))
    peak_rows = spec.argmax(axis=0)
    assert np.all(np.abs(peak_rows - row) <= 1)
    # one-window DFT oracle
    win = get_window("hann", 160)
    mag = np.abs(np.fft.rfft(tone(freq, n=160) * win))[:80]
    assert abs(int(mag.argmax()) - row) <= 1


def test_bandwidth_partition():
    assert BIN_HZ == 275.625
    lo, hi = frequency_range(0)
    assert lo == 0.0 and hi == BIN_HZ
    assert frequency_range(79)[1] == pytest.approx(80 * 275.625)
    assert 80 * BIN_HZ == 22050.0


@given(st.floats(100.0, 21000.0), st.floats(0.01, 10.0), st.floats(0, 2 * math.pi))
@settings(max_examples=25, deadline=None)
def test_spectrogram_shape_and_range(freq, amp, phase):
    spec = make_spectrogram(tone(freq, amp, phase=phase))
    assert spec.shape == (80, 80)
    assert spec.min() >= 0.0 and spec.max() <= 1.0
    assert np.array_equal(spec, make_spectrogram(tone(freq, amp, phase=phase)))


def test_batched_matches_single():
    x = np.stack([tone(1000.0), tone(7000.0, 0.3)])
    np.testing.assert_allclose(make_spectrograms(x), np.stack([make_spectrogram(s) for s in x]))


# --- split ----------------------------------------------------------------

def test_split_sizes_anchor():
    assert split_sizes(4345) == (3476, 434, 435)
    assert split_sizes(10) == (8, 1, 1)


def test_split_too_small():
    with pytest.raises(ValueError):
        split_sizes(2)


@given(st.integers(3, 3000), st.integers(0, 2**31 - 1))
@settings(max_examples=50, deadline=None)
def test_split_partitions(n, seed):
    data = PairedSet(visual=np.zeros((n, 1, 1)), audio_spec=np.zeros((n, 1, 1)), labels=np.zeros(n, dtype=int),
                     index=np.arange(n))
    split = split_dataset(data, seed=seed)
    idx = np.concatenate([p.index for p in split.parts().values()])
    assert len(idx) == n and len(np.unique(idx)) == n
    assert (len(split.train), len(split.validation), len(split.test)) == split_sizes(n)


def test_split_seeded():
    data = generate_synthetic(SyntheticConfig(n_samples=50))
    a, b = split_dataset(data, seed=3), split_dataset(data, seed=3)
    assert np.array_equal(a.test.index, b.test.index)


# --- noise ----------------------------------------------------------------

def test_visual_awgn_identity_and_errors():
    x = np.random.default_rng(0).random((80, 80))
    assert np.array_equal(add_visual_awgn(x, 0, seed=1), x)
    with pytest.raises(ValueError):
        add_visual_awgn(x, -1, seed=1)


def test_visual_awgn_std_and_clip():
    noisy = add_visual_awgn(np.full((80, 80), 0.5), 25, seed=0)
    assert abs((noisy * 255).std() - 25) < 1.5
    assert add_visual_awgn(np.ones((80, 80)), 10, seed=0).max() <= 1.0


def test_audio_awgn_snr():
    x = tone(1000.0, math.sqrt(2))  # unit power
    noisy = add_audio_awgn(x[None], 50, seed=0)[0]
    noise = noisy - x
    snr = 10 * math.log10(np.mean(x**2) / np.mean(noise**2))
    assert abs(snr - 50) < 0.5
    assert np.array_equal(add_audio_awgn(x[None], math.inf, seed=0)[0], x)
    assert np.array_equal(add_audio_awgn(x[None], 60, seed=4), add_audio_awgn(x[None], 60, seed=4))
    with pytest.raises(ValueError):
        add_audio_awgn(np.zeros((1, SNIPPET_LEN)), 50, seed=0)


def test_audio_noise_regenerates_spectrograms():
    data = generate_synthetic(SyntheticConfig(n_samples=8))
    noisy = data.with_audio_noise(20, seed=0)
    assert not np.array_equal(noisy.audio_spec, data.audio_spec)
    np.testing.assert_allclose(noisy.audio_spec, make_spectrograms(noisy.audio_raw), atol=1e-6)
    assert np.array_equal(noisy.visual, data.visual)


# --- synthetic ------------------------------------------------------------

def test_synthetic_class_counts_and_determinism():
    a = generate_synthetic(SyntheticConfig(n_samples=400, seed=5))
    assert (a.labels == 0).sum() == 100 and (a.labels == 1).sum() == 300
    b = generate_synthetic(SyntheticConfig(n_samples=400, seed=5))
    assert np.array_equal(a.visual, b.visual) and np.array_equal(a.audio_spec, b.audio_spec)


def test_clean_synthetic_is_threshold_separable():
    data = generate_synthetic(SyntheticConfig(n_samples=600, seed=1))
    feature = data.visual.reshape(len(data), -1).mean(1)
    best = max(np.mean((feature >= t) == (data.labels == 1)) for t in np.unique(feature))
    assert best == 1.0


def test_labels_shared_across_modalities():
    data = generate_synthetic(SyntheticConfig(n_samples=20))
    for s in data:
        assert isinstance(s, PairedSample) and s.label in (0, 1)
        assert s.visual.shape == (80, 80) and s.audio_spec.shape == (80, 80)


@pytest.mark.parametrize("kwargs", [dict(class_ratio=0.0), dict(class_ratio=1.0), dict(visual_noise_std=-1.0),
                                    dict(nuisance_jitter=2.0)])
def test_synthetic_config_validation(kwargs):
    with pytest.raises(ValueError):
        SyntheticConfig(**kwargs)
