"""Declarative layer chains built on torch.

An :class:`ArchitectureSpec` is an input shape plus a list of layer dicts,
each with a ``type`` from the vocabulary below and optionally a ``tag``
naming the boundary after that layer::

    conv(out_channels, kernel, stride=1, padding=0 | "same")
    maxpool(kernel, stride=kernel)
    activation(name=relu | leaky_relu | sigmoid | tanh, slope=0.01)
    flatten, dense(out_dim[, in_dim]), dropout(rate), batchnorm
    unflatten(shape)
    deconv(out_channels, kernel, stride=1, padding=0, output_padding=0)

Parameters use torch's default initialization (uniform with fan-in
scaled bounds) drawn under a fixed seed.
"""

from __future__ import annotations

import io
import json
import math
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import yaml
from torch import nn

PRESET_DIR = Path(__file__).parent / "presets"


class ArchitectureError(ValueError):
    pass


@dataclass
class ArchitectureSpec:
    input_shape: tuple[int, ...]
    layers: list[dict] = field(default_factory=list)

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        self.layers = [dict(layer) for layer in self.layers]

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        """Output shape after every layer (per item, without batch dim)."""
        return infer_shapes(self)

    @property
    def output_shape(self) -> tuple[int, ...]:
        shapes = self.shapes
        return shapes[-1] if shapes else self.input_shape

    def tags(self) -> dict[str, int]:
        return {layer["tag"]: i for i, layer in enumerate(self.layers) if "tag" in layer}

    def to_dict(self) -> dict:
        return {"input_shape": list(self.input_shape), "layers": self.layers}

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureSpec":
        return cls(input_shape=d["input_shape"], layers=d.get("layers", []))


def _conv_out(size: int, kernel: int, stride: int, padding) -> int:
    if padding == "same":
        return size
    return (size + 2 * padding - kernel) // stride + 1


def infer_shapes(spec: ArchitectureSpec) -> list[tuple[int, ...]]:
    shape = spec.input_shape
    out = []
    for i, layer in enumerate(spec.layers):
        kind = layer.get("type")

        def fail(msg):
            raise ArchitectureError(f"layer {i} ({kind}): {msg}; input shape {shape}")

        if kind in ("conv", "deconv", "maxpool"):
            if len(shape) != 3:
                fail("expects a (channels, height, width) input")
            c, h, w = shape
            k = int(layer["kernel"])
            if kind == "maxpool":
                s = int(layer.get("stride", k))
                shape = (c, (h - k) // s + 1, (w - k) // s + 1)
            elif kind == "conv":
                s, p = int(layer.get("stride", 1)), layer.get("padding", 0)
                if p == "same" and s != 1:
                    fail("'same' padding needs stride 1")
                shape = (int(layer["out_channels"]), _conv_out(h, k, s, p), _conv_out(w, k, s, p))
            else:
                s, p, op = int(layer.get("stride", 1)), int(layer.get("padding", 0)), int(layer.get("output_padding", 0))
                shape = (int(layer["out_channels"]), (h - 1) * s - 2 * p + k + op, (w - 1) * s - 2 * p + k + op)
            if min(shape) < 1:
                fail(f"output shape {shape} is empty")
        elif kind == "flatten":
            shape = (math.prod(shape),)
        elif kind == "dense":
            if len(shape) != 1:
                fail("dense needs a flat input; add a flatten layer")
            if "in_dim" in layer and int(layer["in_dim"]) != shape[0]:
                fail(f"declared in_dim {layer['in_dim']} but receives {shape[0]}")
            shape = (int(layer["out_dim"]),)
        elif kind == "unflatten":
            target = tuple(int(s) for s in layer["shape"])
            if len(shape) != 1 or math.prod(target) != shape[0]:
                fail(f"cannot unflatten into {target}")
            shape = target
        elif kind == "batchnorm":
            if len(shape) not in (1, 3):
                fail("batchnorm needs a flat or (C, H, W) input")
        elif kind in ("activation", "dropout"):
            pass
        else:
            fail("unknown layer type")
        out.append(tuple(shape))
    return out


def _make_layer(layer: dict, in_shape: tuple[int, ...]) -> nn.Module:
    kind = layer["type"]
    if kind == "conv":
        return nn.Conv2d(in_shape[0], int(layer["out_channels"]), int(layer["kernel"]),
                         stride=int(layer.get("stride", 1)), padding=layer.get("padding", 0))
    if kind == "deconv":
        return nn.ConvTranspose2d(in_shape[0], int(layer["out_channels"]), int(layer["kernel"]),
                                  stride=int(layer.get("stride", 1)), padding=int(layer.get("padding", 0)),
                                  output_padding=int(layer.get("output_padding", 0)))
    if kind == "maxpool":
        k = int(layer["kernel"])
        return nn.MaxPool2d(k, stride=int(layer.get("stride", k)))
    if kind == "flatten":
        return nn.Flatten()
    if kind == "unflatten":
        return nn.Unflatten(1, tuple(int(s) for s in layer["shape"]))
    if kind == "dense":
        return nn.Linear(in_shape[0], int(layer["out_dim"]))
    if kind == "dropout":
        return nn.Dropout(float(layer["rate"]))
    if kind == "batchnorm":
        return nn.BatchNorm1d(in_shape[0]) if len(in_shape) == 1 else nn.BatchNorm2d(in_shape[0])
    if kind == "activation":
        name = layer.get("name", "relu")
        if name == "relu":
            return nn.ReLU()
        if name == "leaky_relu":
            return nn.LeakyReLU(float(layer.get("slope", 0.01)))
        if name == "sigmoid":
            return nn.Sigmoid()
        if name == "tanh":
            return nn.Tanh()
        raise ArchitectureError(f"unknown activation {name!r}")
    raise ArchitectureError(f"unknown layer type {kind!r}")


class ChainModel(nn.Module):
    """A sequential network built from an :class:`ArchitectureSpec`."""

    def __init__(self, spec: ArchitectureSpec):
        super().__init__()
        self.spec = spec
        shapes = [spec.input_shape] + infer_shapes(spec)
        self.layers = nn.ModuleList(_make_layer(l, shapes[i]) for i, l in enumerate(spec.layers))
        self.tags = spec.tags()

    def _prepare(self, x) -> torch.Tensor:
        p = next(self.parameters(), None)
        dtype = p.dtype if p is not None else torch.get_default_dtype()
        x = torch.as_tensor(x, dtype=dtype)
        if x.dim() == len(self.spec.input_shape) and self.spec.input_shape[0] == 1 and len(self.spec.input_shape) == 3:
            x = x.unsqueeze(1)
        return x

    def forward(self, x) -> torch.Tensor:
        x = self._prepare(x)
        for layer in self.layers:
            x = layer(x)
        return x

    def forward_until(self, x, tag: str) -> torch.Tensor:
        if tag == "output":
            return self.forward(x)
        if tag not in self.tags:
            raise KeyError(f"unknown layer tag {tag!r}; known: {sorted(self.tags)}")
        x = self._prepare(x)
        for layer in self.layers[: self.tags[tag] + 1]:
            x = layer(x)
        return x

    @property
    def output_dim(self) -> int:
        return math.prod(self.spec.output_shape)

    def parameter_vector(self) -> torch.Tensor:
        return nn.utils.parameters_to_vector(self.parameters()).detach().clone()

    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


def build_model(spec: ArchitectureSpec | dict, seed: int = 0, dtype: torch.dtype = torch.float32) -> ChainModel:
    if isinstance(spec, dict):
        spec = ArchitectureSpec.from_dict(spec)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = ChainModel(spec)
    return model.to(dtype).eval()


@dataclass
class EncodedBatch:
    """Encoder outputs for one modality, one row per sample."""

    vectors: np.ndarray | torch.Tensor
    labels: np.ndarray | torch.Tensor
    modality: str = "visual"

    def __post_init__(self):
        if len(self.vectors) != len(self.labels):
            raise ValueError(f"{len(self.vectors)} vectors but {len(self.labels)} labels")


@torch.no_grad()
def _batched(fn, inputs, batch_size: int) -> np.ndarray:
    outs = [fn(inputs[i : i + batch_size]).reshape(min(batch_size, len(inputs) - i), -1).cpu().numpy()
            for i in range(0, len(inputs), batch_size)]
    return np.concatenate(outs) if outs else None


def encode(model: ChainModel, inputs, labels=None, modality: str = "visual",
           batch_size: int = 512) -> EncodedBatch:
    """Flattened eval-mode encoder outputs for a batch of 80x80 inputs."""
    inputs = np.asarray(inputs)
    if inputs.shape[1:] not in (model.spec.input_shape, model.spec.input_shape[1:]):
        raise ValueError(f"inputs of shape {inputs.shape[1:]} do not match {model.spec.input_shape}")
    was_training = model.training
    model.eval()
    vecs = _batched(model, inputs, batch_size)
    model.train(was_training)
    if vecs is None:
        vecs = np.zeros((0, model.output_dim), dtype=np.float32)
    if labels is None:
        labels = np.full(len(vecs), -1)
    return EncodedBatch(vecs, np.asarray(labels), modality)


def extract_hidden(model: ChainModel, tag: str, batch_size: int = 512) -> Callable[[np.ndarray], np.ndarray]:
    """Feature extractor returning the (flattened) activations at ``tag``."""
    if tag != "output" and tag not in model.tags:
        raise KeyError(f"unknown layer tag {tag!r}; known: {sorted(model.tags)}")

    def extract(inputs) -> np.ndarray:
        was_training = model.training
        model.eval()
        out = _batched(lambda x: model.forward_until(x, tag), np.asarray(inputs), batch_size)
        model.train(was_training)
        return out

    return extract


# --- presets --------------------------------------------------------------

def preset_path(name: str | Path) -> Path:
    p = Path(name)
    if p.exists():
        return p
    q = PRESET_DIR / (p.name if p.suffix else p.name + ".cfg")
    if q.exists():
        return q
    raise FileNotFoundError(f"no preset {name!r} (looked in {PRESET_DIR})")


def load_preset(*names) -> dict:
    """Load and merge preset files. Returns ``{"networks": {...}, "train": {...}, ...}``."""
    merged: dict = {"networks": {}, "train": {}}
    for name in names:
        raw = yaml.safe_load(preset_path(name).read_text()) or {}
        for key, value in raw.items():
            if key == "networks":
                merged["networks"].update({k: ArchitectureSpec.from_dict(v) for k, v in value.items()})
            elif key == "train":
                merged["train"].update(value)
            else:
                merged[key] = value
    return merged


def list_presets() -> list[str]:
    return sorted(p.name for p in PRESET_DIR.glob("*.cfg"))


# --- checkpoints ----------------------------------------------------------

def save_checkpoint(path, models: dict[str, ChainModel], meta: dict | None = None, seed: int | None = None) -> Path:
    """One ``.npz`` holding a JSON manifest and flat parameter/buffer arrays per network."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        "substrate": f"torch {torch.__version__}",
        "seed": seed,
        "networks": {name: m.spec.to_dict() for name, m in models.items()},
        "meta": meta or {},
    }
    arrays = {"manifest": np.array(json.dumps(manifest, sort_keys=True))}
    for name, m in models.items():
        arrays[f"{name}.params"] = m.parameter_vector().double().numpy()
        bufs = [b.detach().double().reshape(-1) for b in m.buffers()]
        arrays[f"{name}.buffers"] = torch.cat(bufs).numpy() if bufs else np.zeros(0)
    # fixed entry timestamps keep the file byte-identical across reruns
    with zipfile.ZipFile(path, "w") as zf:
        for key, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arr), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{key}.npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())
    return path


def load_checkpoint(path) -> tuple[dict[str, ChainModel], dict]:
    with np.load(path) as data:
        manifest = json.loads(str(data["manifest"]))
        models = {}
        for name, spec in manifest["networks"].items():
            m = build_model(ArchitectureSpec.from_dict(spec))
            nn.utils.vector_to_parameters(torch.as_tensor(data[f"{name}.params"], dtype=torch.float32), m.parameters())
            flat = torch.as_tensor(data[f"{name}.buffers"])
            offset = 0
            for b in m.buffers():
                b.copy_(flat[offset : offset + b.numel()].reshape(b.shape).to(b.dtype))
                offset += b.numel()
            models[name] = m.eval()
    return models, manifest
