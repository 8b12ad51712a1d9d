"""On-disk dataset layouts: raw directory, preprocessed cache, archive fetch.

Raw layout::

    frames/<index>.png     480x480 RGB or 80x80 grayscale
    audio/<index>.wav      one 1470-sample snippet per index
    audio.wav              (alternative) one long recording, snippet k = index k
    labels.csv             header ``index,label``

Cache layout: ``<split>_<array>.npy`` for arrays visual, audio, audio_raw,
labels, index, plus ``manifest.json``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import shutil
import tarfile
import urllib.request
import zipfile
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.io import wavfile

from .preprocess import (
    DB_FLOOR, HOP, IMAGE_SIZE, N_FFT, RAW_FRAME_SHAPE, SAMPLE_RATE, SNIPPET_LEN,
    grayscale_resize, make_spectrograms, segment_audio,
)
from .samples import DatasetSplit, PairedSet, split_dataset

log = logging.getLogger(__name__)

ZENODO_RECORD = "https://zenodo.org/api/records/12604782"
CACHE_ARRAYS = ("visual", "audio", "audio_raw", "labels", "index")


class DatasetFormatError(ValueError):
    """Raw data does not follow the expected layout."""


# --- raw layout -----------------------------------------------------------

def read_labels(path: Path) -> dict[int, int]:
    labels = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            labels[int(row["index"])] = int(row["label"])
    return labels


def _read_wav(path: Path) -> np.ndarray:
    rate, data = wavfile.read(path)
    if rate != SAMPLE_RATE:
        raise DatasetFormatError(f"{path}: sample rate {rate}, expected {SAMPLE_RATE}")
    if data.ndim > 1:
        data = data.mean(axis=1)
    if np.issubdtype(data.dtype, np.integer):
        data = data / float(np.iinfo(data.dtype).max)
    return np.asarray(data, dtype=np.float64)


def _read_frame(path: Path) -> np.ndarray:
    img = np.asarray(Image.open(path))
    if img.shape == RAW_FRAME_SHAPE:
        return grayscale_resize(img)
    if img.shape == (IMAGE_SIZE, IMAGE_SIZE):
        return img.astype(np.float64) / 255.0
    raise DatasetFormatError(f"{path}: unsupported frame shape {img.shape}")


def load_raw_dataset(raw_dir) -> PairedSet:
    """Read and preprocess a raw dataset directory into a :class:`PairedSet`."""
    raw_dir = Path(raw_dir)
    frames_dir = raw_dir / "frames"
    labels_path = raw_dir / "labels.csv"
    if not frames_dir.is_dir() or not labels_path.exists():
        raise DatasetFormatError(f"{raw_dir}: expected frames/ and labels.csv")
    labels = read_labels(labels_path)
    frame_files = {int(p.stem): p for p in frames_dir.glob("*.png")}
    indices = sorted(frame_files)

    problems = [f"index {i}: no row in labels.csv" for i in indices if i not in labels]
    long_wav = raw_dir / "audio.wav"
    if long_wav.exists():
        snippets = segment_audio(_read_wav(long_wav))
        problems += [f"index {i}: beyond the {len(snippets)} snippets of audio.wav"
                     for i in indices if i >= len(snippets)]
        audio = {i: snippets[i] for i in indices if i < len(snippets)}
    else:
        audio = {}
        for i in indices:
            p = raw_dir / "audio" / f"{i}.wav"
            if not p.exists():
                problems.append(f"index {i}: missing audio/{i}.wav")
                continue
            wav = _read_wav(p)
            if len(wav) != SNIPPET_LEN:
                problems.append(f"index {i}: snippet has {len(wav)} samples, expected {SNIPPET_LEN}")
                continue
            audio[i] = wav
    if problems:
        raise DatasetFormatError("malformed raw dataset:\n  " + "\n  ".join(problems))

    raw = np.stack([audio[i] for i in indices])
    return PairedSet(
        visual=np.stack([_read_frame(frame_files[i]) for i in indices]),
        audio_spec=make_spectrograms(raw),
        labels=np.array([labels[i] for i in indices]),
        index=np.array(indices),
        audio_raw=raw,
    )


def write_raw_dataset(data: PairedSet, raw_dir) -> Path:
    """Write a set in the raw layout (80x80 grayscale frames, one long WAV)."""
    raw_dir = Path(raw_dir)
    (raw_dir / "frames").mkdir(parents=True, exist_ok=True)
    for i, frame in zip(data.index, data.visual):
        Image.fromarray(np.round(np.clip(frame, 0, 1) * 255).astype(np.uint8)).save(
            raw_dir / "frames" / f"{i}.png")
    if data.audio_raw is None:
        raise ValueError("raw layout needs raw audio snippets")
    # snippet k of audio.wav belongs to index k
    n_slots = int(data.index.max()) + 1
    wave = np.zeros((n_slots, SNIPPET_LEN))
    wave[data.index] = data.audio_raw
    wavfile.write(raw_dir / "audio.wav", SAMPLE_RATE, wave.ravel().astype(np.float32))
    with open(raw_dir / "labels.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "label"])
        w.writerows(zip(data.index.tolist(), data.labels.tolist()))
    return raw_dir


# --- preprocessed cache ---------------------------------------------------

def preprocessing_params() -> dict:
    return {
        "image_size": IMAGE_SIZE, "sample_rate": SAMPLE_RATE, "snippet_len": SNIPPET_LEN,
        "n_fft": N_FFT, "hop": HOP, "window": "hann", "db_floor": DB_FLOOR,
        "grayscale": "luma-601", "resize": "block-mean",
    }


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def save_cache(split: DatasetSplit, out_dir, seed: int, extra: dict | None = None) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, part in split.parts().items():
        arrays = {
            "visual": part.visual, "audio": part.audio_spec, "audio_raw": part.audio_raw,
            "labels": part.labels, "index": part.index,
        }
        for key, arr in arrays.items():
            if arr is None:
                continue
            path = out_dir / f"{name}_{key}.npy"
            np.save(path, arr)
            files[path.name] = {"shape": list(arr.shape), "dtype": str(arr.dtype), "sha256": _sha256(path)}
    manifest = {
        "seed": seed,
        "split_ratio": list(split.split_ratio),
        "preprocessing": preprocessing_params(),
        "files": files,
        **(extra or {}),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return out_dir


def load_cache(cache_dir) -> DatasetSplit:
    cache_dir = Path(cache_dir)
    manifest_path = cache_dir / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"{cache_dir} has no manifest.json; run `cmkt preprocess` first")
    manifest = json.loads(manifest_path.read_text())
    parts = {}
    for name in ("train", "validation", "test"):
        def arr(key):
            p = cache_dir / f"{name}_{key}.npy"
            return np.load(p) if p.exists() else None
        parts[name] = PairedSet(visual=arr("visual"), audio_spec=arr("audio"), labels=arr("labels"),
                                index=arr("index"), audio_raw=arr("audio_raw"))
    return DatasetSplit(parts["train"], parts["validation"], parts["test"],
                        tuple(manifest.get("split_ratio", (8, 1, 1))))


def manifest_hash(cache_dir) -> str:
    return hashlib.sha256((Path(cache_dir) / "manifest.json").read_bytes()).hexdigest()[:16]


def preprocess(raw_dir, out_dir, seed: int = 0, ratio=(8, 1, 1)) -> Path:
    data = load_raw_dataset(raw_dir)
    split = split_dataset(data, ratio, seed)
    return save_cache(split, out_dir, seed, extra={"n_samples": len(data)})


# --- archive fetch --------------------------------------------------------

def _md5(path: Path) -> str:
    h = hashlib.md5()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _unpack(path: Path, dest: Path) -> None:
    if zipfile.is_zipfile(path):
        with zipfile.ZipFile(path) as zf:
            zf.extractall(dest)
    elif tarfile.is_tarfile(path):
        with tarfile.open(path) as tf:
            tf.extractall(dest)
    else:
        shutil.copy2(path, dest / path.name)


def fetch(dest, record_url: str = ZENODO_RECORD) -> Path:
    """Download a Zenodo record, verify each file's checksum and unpack it.

    A completed fetch leaves ``.fetch_complete.json``; re-running is then a
    no-op. On a checksum mismatch the downloaded files are removed.
    """
    dest = Path(dest)
    marker = dest / ".fetch_complete.json"
    if marker.exists():
        log.info("%s already fetched", dest)
        return dest
    with urllib.request.urlopen(record_url) as resp:
        record = json.load(resp)
    entries = record["files"]
    if isinstance(entries, dict):  # /files endpoint nests entries
        entries = entries.get("entries", [])
        if isinstance(entries, dict):
            entries = list(entries.values())
    dest.mkdir(parents=True, exist_ok=True)
    downloads = dest / "_downloads"
    downloads.mkdir(exist_ok=True)
    done = {}
    try:
        for entry in entries:
            key = entry["key"]
            algo, expected = entry["checksum"].split(":", 1)
            if algo != "md5":
                raise ValueError(f"{key}: unsupported checksum algorithm {algo}")
            url = entry["links"].get("content") or entry["links"]["self"]
            target = downloads / key
            with urllib.request.urlopen(url) as resp, open(target, "wb") as fh:
                shutil.copyfileobj(resp, fh)
            got = _md5(target)
            if got != expected:
                raise IOError(f"checksum mismatch for {key}: expected {expected}, got {got}")
            done[key] = expected
    except BaseException:
        shutil.rmtree(downloads, ignore_errors=True)
        raise
    for key in done:
        _unpack(downloads / key, dest)
    shutil.rmtree(downloads)
    if not ((dest / "frames").is_dir() and (dest / "labels.csv").exists()):
        log.warning("%s does not follow the raw layout (frames/, audio/, labels.csv); "
                    "rearrange it before `cmkt preprocess`", dest)
    marker.write_text(json.dumps({"record": record_url, "files": done}, indent=2, sort_keys=True))
    return dest
