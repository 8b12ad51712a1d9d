"""Training pipelines: single-modal, semantic alignment, cross-modality
mapping (fully and semi-supervised) and multimodal fusion.

Each pipeline returns a :class:`TrainResult` holding an eval-mode predictor
(something with ``predict(data) -> defect probabilities``), a
:class:`TrialRecord` with the validation accuracy and training runtime, and
a history dict of per-epoch losses.
"""

from __future__ import annotations

import copy
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch

from ..data.samples import DatasetSplit, PairedSet
from ..diagnostics import group_mmds
from ..evaluation import accuracy, confusion, evaluate_scores, measure_runtime, MetricsReport
from ..losses import ccsa_loss, mean_classification_loss, mse, semantic_alignment_loss, separation_loss, weighted_bce
from ..models import (
    ArchitectureSpec, ChainModel, EncodedBatch, build_model, encode, extract_hidden,
    load_checkpoint, save_checkpoint,
)
from .config import ConfigError, TrainConfig, TrialRecord

log = logging.getLogger(__name__)

PREDICT_BATCH = 512


class TrainingDivergedError(RuntimeError):
    pass


class PhaseOrderError(RuntimeError):
    pass


@dataclass
class TrainResult:
    model: "Predictor"
    record: TrialRecord
    history: dict = field(default_factory=dict)


# --- shared machinery -----------------------------------------------------

def _as_input(x: np.ndarray) -> torch.Tensor:
    t = torch.as_tensor(np.asarray(x), dtype=torch.float32)
    return t.unsqueeze(1) if t.dim() == 3 else t


def _adam(params, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=cfg.learning_rate, betas=cfg.betas, eps=cfg.eps,
                            weight_decay=cfg.weight_decay)


def _seed_rngs(seed: int) -> np.random.Generator:
    """Batch-order generator; also seeds torch's global RNG, which dropout draws from."""
    torch.manual_seed(seed)
    return np.random.default_rng(seed)


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def _check(loss: torch.Tensor, where: str) -> None:
    if not torch.isfinite(loss):
        raise TrainingDivergedError(f"non-finite loss ({loss.item()}) at {where}")


def _freeze(*models: torch.nn.Module) -> None:
    for m in models:
        m.eval()
        m.requires_grad_(False)


def _fit(modules: list[torch.nn.Module], loss_fn: Callable[[np.ndarray], torch.Tensor], n: int,
         cfg: TrainConfig, name: str) -> list[float]:
    """Plain minibatch Adam loop; returns the per-epoch mean loss."""
    if n == 0:
        raise ConfigError(f"{name}: no training samples")
    params = [p for m in modules for p in m.parameters() if p.requires_grad]
    opt = _adam(params, cfg)
    rng = _seed_rngs(cfg.seed)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        for m in modules:
            m.train()
        total = 0.0
        for b, idx in enumerate(_batches(n, cfg.batch_size, rng)):
            loss = loss_fn(idx)
            _check(loss, f"{name} epoch {epoch} batch {b}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        history.append(total / n)
    for m in modules:
        m.eval()
    return history


@torch.no_grad()
def _predict(fn: Callable[[torch.Tensor], torch.Tensor], *inputs: np.ndarray) -> np.ndarray:
    n = len(inputs[0])
    out = [fn(*(_as_input(x[i : i + PREDICT_BATCH]) for x in inputs)).reshape(-1)
           for i in range(0, n, PREDICT_BATCH)]
    return torch.cat(out).numpy().astype(np.float64) if out else np.zeros(0)


def _other(modality: str) -> str:
    return "audio" if modality == "visual" else "visual"


def _direction(direction: str) -> tuple[str, str]:
    """(source, target) modality for a transfer direction."""
    d = direction.lower().replace("→", "2").replace("->", "2")
    if d in ("v2a", "visual2audio"):
        return "visual", "audio"
    if d in ("a2v", "audio2visual"):
        return "audio", "visual"
    raise ConfigError(f"unknown direction {direction!r}; use v2a or a2v")


def fit_io(spec: ArchitectureSpec, in_dim: int | None = None, out_dim: int | None = None) -> ArchitectureSpec:
    """Copy of a flat-input spec with its input and/or final dense width replaced."""
    spec = copy.deepcopy(spec)
    if in_dim is not None and spec.input_shape != (in_dim,):
        spec.input_shape = (in_dim,)
        for layer in spec.layers:
            if layer["type"] == "dense":
                layer.pop("in_dim", None)
                break
    if out_dim is not None:
        last = max(i for i, l in enumerate(spec.layers) if l["type"] == "dense")
        spec.layers[last]["out_dim"] = out_dim
    return spec


def _record(model: "Predictor", val: PairedSet, params: dict, runtime: float, trial_id: int = 0) -> TrialRecord:
    if len(val) == 0:
        acc = 0.0
    else:
        acc = accuracy(confusion(model.predict(val), val.labels))
    return TrialRecord(trial_id=trial_id, params=params, val_accuracy=acc, runtime_s=runtime)


# --- predictors -----------------------------------------------------------

class Predictor:
    method = ""

    def predict(self, data: PairedSet) -> np.ndarray:
        raise NotImplementedError

    def networks(self) -> dict[str, ChainModel]:
        raise NotImplementedError

    def meta(self) -> dict:
        return {"method": self.method}


class EncoderClassifier(Predictor):
    """Encoder + classifier applied to one modality (single-modal or semantic alignment)."""

    def __init__(self, encoder: ChainModel, classifier: ChainModel, modality: str, method: str):
        self.encoder, self.classifier = encoder, classifier
        self.modality = modality
        self.method = method

    def predict_inputs(self, x: np.ndarray) -> np.ndarray:
        return _predict(lambda t: self.classifier(self.encoder(t)), x)

    def predict(self, data: PairedSet, modality: str | None = None) -> np.ndarray:
        return self.predict_inputs(data.modality(modality or self.modality))

    def encode(self, data: PairedSet, modality: str) -> EncodedBatch:
        return encode(self.encoder, data.modality(modality), data.labels, modality)

    def networks(self):
        return {"encoder": self.encoder, "classifier": self.classifier}

    def meta(self):
        return {"method": self.method, "modality": self.modality}


class MappingModel(Predictor):
    """Target input -> (target encoder) -> mapping -> classifier head."""

    def __init__(self, method: str, direction: str, mapping: ChainModel, head: ChainModel,
                 target_encoder: ChainModel | None = None, encoder_tag: str = "bottleneck",
                 extra: dict[str, ChainModel] | None = None):
        self.method, self.direction = method, direction
        self.source, self.target = _direction(direction)
        self.mapping, self.head = mapping, head
        self.target_encoder, self.encoder_tag = target_encoder, encoder_tag
        self.extra = extra or {}

    def features(self, t: torch.Tensor) -> torch.Tensor:
        if self.target_encoder is not None:
            t = self.target_encoder.forward_until(t, self.encoder_tag)
        return self.mapping(t)

    def predict_inputs(self, x: np.ndarray) -> np.ndarray:
        return _predict(lambda t: self.head(self.features(t)), x)

    def predict(self, data: PairedSet) -> np.ndarray:
        return self.predict_inputs(data.modality(self.target))

    def networks(self):
        nets = {"mapping": self.mapping, "head": self.head, **self.extra}
        if self.target_encoder is not None:
            nets["target_encoder"] = self.target_encoder
        return nets

    def meta(self):
        return {"method": self.method, "direction": self.direction, "encoder_tag": self.encoder_tag,
                "extra": sorted(self.extra)}


class FusionModel(Predictor):
    def __init__(self, level: str, nets: dict[str, ChainModel]):
        if level not in ("data", "feature", "decision"):
            raise ConfigError(f"unknown fusion level {level!r}")
        self.level = level
        self.method = f"fusion-{level}"
        self.nets = nets

    @property
    def fused_dim(self) -> int:
        if self.level == "data":
            return self.nets["encoder"].output_dim
        return self.nets["visual_encoder"].output_dim + self.nets["audio_encoder"].output_dim

    def forward(self, xv: torch.Tensor, xa: torch.Tensor) -> torch.Tensor:
        if self.level == "data":
            return self.nets["classifier"](self.nets["encoder"](torch.cat([xv, xa], dim=1)))
        fused = torch.cat([self.nets["visual_encoder"](xv), self.nets["audio_encoder"](xa)], dim=1)
        return self.nets["head"](fused)

    def predict(self, data: PairedSet) -> np.ndarray:
        return _predict(self.forward, data.visual, data.audio_spec)

    def networks(self):
        return dict(self.nets)

    def meta(self):
        return {"method": self.method, "level": self.level}


def save_predictor(path, model: Predictor, seed: int | None = None, extra_meta: dict | None = None):
    return save_checkpoint(path, model.networks(), {**model.meta(), **(extra_meta or {})}, seed)


def load_predictor(path) -> tuple[Predictor, dict]:
    nets, manifest = load_checkpoint(path)
    meta = manifest["meta"]
    method = meta["method"]
    if method in ("visual-only", "audio-only", "semantic-alignment"):
        model = EncoderClassifier(nets["encoder"], nets["classifier"], meta["modality"], method)
    elif method in ("fsl-mapping", "ssl-mapping"):
        model = MappingModel(method, meta["direction"], nets["mapping"], nets["head"], nets.get("target_encoder"),
                             meta.get("encoder_tag", "bottleneck"), {k: nets[k] for k in meta.get("extra", [])})
    elif method.startswith("fusion-"):
        model = FusionModel(meta["level"], nets)
    else:
        raise ValueError(f"unknown method {method!r} in checkpoint")
    return model, manifest


def evaluate_model(model: Predictor, data: PairedSet, tag: str = "", training_runtime_s: float = 0.0,
                   runtime_data: PairedSet | None = None) -> MetricsReport:
    """Metrics on ``data``; prediction runtime is one forward pass over ``runtime_data``."""
    scores = model.predict(data)
    rt = 0.0
    if runtime_data is not None:
        rt = measure_runtime(lambda: model.predict(runtime_data), len(runtime_data))
    return evaluate_scores(scores, data.labels, tag or model.method, training_runtime_s, rt)


# --- single-modal ---------------------------------------------------------

def train_single_modal(split: DatasetSplit, modality: str, cfg: TrainConfig,
                       networks: dict[str, ArchitectureSpec]) -> TrainResult:
    """Encoder + classifier trained end-to-end on one modality with weighted BCE."""
    start = time.perf_counter()
    enc = build_model(networks["encoder"], cfg.seed)
    clf = build_model(networks["classifier"], cfg.seed + 1)
    x = _as_input(split.train.modality(modality))
    y = torch.as_tensor(split.train.labels, dtype=torch.float32)
    weights = cfg.ccsa.class_weights

    def loss_fn(idx):
        return weighted_bce(clf(enc(x[idx])).reshape(-1), y[idx], weights)

    losses = _fit([enc, clf], loss_fn, len(y), cfg, f"{modality}-only")
    model = EncoderClassifier(enc, clf, modality, f"{modality}-only")
    runtime = time.perf_counter() - start
    return TrainResult(model, _record(model, split.validation, {}, runtime), {"loss": losses})


# --- semantic alignment ---------------------------------------------------

LOSS_KEYS = ("L_SA", "L_S", "L_CSA", "L_C", "L_CCSA")  # per-step tuples in history["steps"] follow this order

def train_semantic_alignment(split: DatasetSplit, cfg: TrainConfig, networks: dict[str, ArchitectureSpec],
                             target: str = "visual", snapshot_data: PairedSet | None = None,
                             on_epoch: Callable[[int, EncoderClassifier], None] | None = None) -> TrainResult:
    """Shared encoder G_e and task classifier G_t trained with alternating updates.

    Per batch (or per epoch with ``cfg.alternate == "per-epoch"``): step 1
    updates G_t on the mean visual/audio BCE with G_e fixed; step 2 updates
    G_e on the CCSA loss with G_t fixed. Both modalities go through the same
    networks. With ``cfg.snapshot_every`` set, group MMDs of the encodings of
    ``snapshot_data`` (default: the test set) are logged after epoch 1 and
    after every ``snapshot_every``-th epoch.
    """
    start = time.perf_counter()
    enc = build_model(networks["encoder"], cfg.seed)
    clf = build_model(networks["classifier"], cfg.seed + 1)
    opt_t = _adam(clf.parameters(), cfg)
    opt_e = _adam(enc.parameters(), cfg)
    xv = _as_input(split.train.visual)
    xa = _as_input(split.train.audio_spec)
    y = torch.as_tensor(split.train.labels, dtype=torch.float32)
    yl = torch.as_tensor(split.train.labels)
    n = len(y)
    if n == 0:
        raise ConfigError("semantic alignment: no training samples")
    weights, margin, gamma = cfg.ccsa.class_weights, cfg.ccsa.margin, cfg.ccsa.tradeoff
    rng = _seed_rngs(cfg.seed)
    model = EncoderClassifier(enc, clf, target, "semantic-alignment")
    snapshot_data = snapshot_data if snapshot_data is not None else split.test
    hist = {"L_SA": [], "L_S": [], "L_CSA": [], "L_C": [], "L_CCSA": [], "train_accuracy": [], "steps": [],
            "mmd": []}

    def step_classifier(idx, epoch_stats):
        enc.eval()
        clf.train()
        with torch.no_grad():
            zv, za = enc(xv[idx]), enc(xa[idx])
        pv, pa = clf(zv).reshape(-1), clf(za).reshape(-1)
        lc = mean_classification_loss(weighted_bce(pv, y[idx], weights), weighted_bce(pa, y[idx], weights))
        _check(lc, f"classifier step, epoch {epoch_stats['epoch']}")
        opt_t.zero_grad()
        lc.backward()
        opt_t.step()
        with torch.no_grad():
            epoch_stats["correct"] += ((pv >= 0.5) == (y[idx] == 1)).sum().item() + ((pa >= 0.5) == (y[idx] == 1)).sum().item()

    def step_encoder(idx, epoch_stats):
        enc.train()
        clf.eval()
        clf.requires_grad_(False)
        zv, za = enc(xv[idx]), enc(xa[idx])
        ev, ea = EncodedBatch(zv, yl[idx], "visual"), EncodedBatch(za, yl[idx], "audio")
        lsa, ls = semantic_alignment_loss(ev, ea), separation_loss(ev, ea, margin)
        lc = mean_classification_loss(weighted_bce(clf(zv).reshape(-1), y[idx], weights),
                                      weighted_bce(clf(za).reshape(-1), y[idx], weights))
        total = ccsa_loss(lsa, ls, lc, gamma)
        _check(total, f"encoder step, epoch {epoch_stats['epoch']}")
        opt_e.zero_grad()
        total.backward()
        opt_e.step()
        clf.requires_grad_(True)
        step = (lsa.item(), ls.item(), lsa.item() + ls.item(), lc.item(), total.item())
        hist["steps"].append(step)
        for key, val in zip(LOSS_KEYS, step):
            epoch_stats[key] += val * len(idx)

    for epoch in range(1, cfg.epochs + 1):
        stats = {"epoch": epoch, "correct": 0, **{key: 0.0 for key in LOSS_KEYS}}
        batches = _batches(n, cfg.batch_size, rng)
        if cfg.alternate == "per-batch":
            for idx in batches:
                step_classifier(idx, stats)
                step_encoder(idx, stats)
        else:
            for idx in batches:
                step_classifier(idx, stats)
            for idx in batches:
                step_encoder(idx, stats)
        for key in LOSS_KEYS:
            hist[key].append(stats[key] / n)
        hist["train_accuracy"].append(stats["correct"] / (2 * n))
        enc.eval()
        clf.eval()
        if cfg.snapshot_every and (epoch == 1 or epoch % cfg.snapshot_every == 0) and len(snapshot_data):
            gm = group_mmds(model.encode(snapshot_data, "visual"), model.encode(snapshot_data, "audio"),
                            shared_bandwidth=True)
            hist["mmd"].append((epoch, gm))
        if on_epoch is not None:
            on_epoch(epoch, model)

    runtime = time.perf_counter() - start
    return TrainResult(model, _record(model, split.validation, {}, runtime), hist)


# --- cross-modality mapping -----------------------------------------------

class FullySupervisedMapping:
    """Three-phase supervised mapping from a source to a target modality.

    Phase 1 trains a source classifier; phase 2 freezes it and regresses its
    hidden features (layer ``fh_tag``) from target inputs; phase 3 freezes
    the mapping and trains a classifier head on the mapped features.
    """

    method = "fsl-mapping"

    def __init__(self, split: DatasetSplit, direction: str, networks: dict[str, ArchitectureSpec],
                 cfgs: dict[str, TrainConfig], fh_tag: str = "hidden"):
        self.split, self.direction = split, direction
        self.source, self.target = _direction(direction)
        self.networks, self.cfgs, self.fh_tag = networks, cfgs, fh_tag
        self.phase = 0
        self.history: dict = {}
        self.source_classifier = self.mapping = self.head = None

    def _require(self, phase: int):
        if self.phase != phase - 1:
            raise PhaseOrderError(f"phase {phase} requested but phase {self.phase} is the last completed")

    def phase1(self):
        self._require(1)
        cfg = self.cfgs["phase1"]
        g = build_model(self.networks["source_classifier"], cfg.seed)
        x = _as_input(self.split.train.modality(self.source))
        y = torch.as_tensor(self.split.train.labels, dtype=torch.float32)
        self.history["phase1"] = _fit([g], lambda i: weighted_bce(g(x[i]).reshape(-1), y[i], cfg.ccsa.class_weights),
                                      len(y), cfg, "phase 1")
        _freeze(g)
        self.source_classifier = g
        self.phase = 1

    def phase2(self):
        self._require(2)
        cfg = self.cfgs["phase2"]
        fh = torch.as_tensor(extract_hidden(self.source_classifier, self.fh_tag)(self.split.train.modality(self.source)))
        g = build_model(fit_io(self.networks["mapping"], out_dim=fh.shape[1]), cfg.seed)
        x = _as_input(self.split.train.modality(self.target))
        with torch.no_grad():
            g.eval()
            self.history["phase2_initial"] = mse(_predict_raw(g, x), fh).item()
        self.history["phase2"] = _fit([g], lambda i: mse(g(x[i]), fh[i]), len(fh), cfg, "phase 2")
        with torch.no_grad():
            self.history["phase2_final"] = mse(_predict_raw(g, x), fh).item()
        _freeze(g)
        self.mapping = g
        self.phase = 2

    def phase3(self):
        self._require(3)
        cfg = self.cfgs["phase3"]
        x = _as_input(self.split.train.modality(self.target))
        with torch.no_grad():
            feats = _predict_raw(self.mapping, x)
        g = build_model(fit_io(self.networks["head"], in_dim=feats.shape[1]), cfg.seed)
        y = torch.as_tensor(self.split.train.labels, dtype=torch.float32)
        self.history["phase3"] = _fit([g], lambda i: weighted_bce(g(feats[i]).reshape(-1), y[i], cfg.ccsa.class_weights),
                                      len(y), cfg, "phase 3")
        _freeze(g)
        self.head = g
        self.phase = 3

    def model(self) -> MappingModel:
        if self.phase != 3:
            raise PhaseOrderError("pipeline not trained through phase 3")
        return MappingModel(self.method, self.direction, self.mapping, self.head,
                            extra={"source_classifier": self.source_classifier})


class SemiSupervisedMapping(FullySupervisedMapping):
    """Three-phase mapping built on two autoencoders.

    Phase 1 trains one autoencoder per modality on reconstruction MSE;
    phase 2 maps target-modality bottleneck features onto source-modality
    bottleneck features; phase 3 trains a (by default logistic) head on the
    mapped features.
    """

    method = "ssl-mapping"

    def __init__(self, split, direction, networks, cfgs, bottleneck_tag: str = "bottleneck"):
        super().__init__(split, direction, networks, cfgs, fh_tag=bottleneck_tag)
        self.autoencoders: dict[str, ChainModel] = {}

    def phase1(self):
        self._require(1)
        for modality in ("visual", "audio"):
            cfg = self.cfgs[f"phase1_{modality}"]
            g = build_model(self.networks[f"{modality}_autoencoder"], cfg.seed)
            x = _as_input(self.split.train.modality(modality))
            self.history[f"phase1_{modality}"] = _fit([g], lambda i, g=g, x=x: mse(g(x[i]), x[i]), len(x), cfg,
                                                      f"phase 1 ({modality} autoencoder)")
            _freeze(g)
            self.autoencoders[modality] = g
        self.phase = 1

    def _bottleneck(self, modality: str) -> torch.Tensor:
        return torch.as_tensor(extract_hidden(self.autoencoders[modality], self.fh_tag)(self.split.train.modality(modality)))

    def phase2(self):
        self._require(2)
        cfg = self.cfgs["phase2"]
        f_in, f_out = self._bottleneck(self.target), self._bottleneck(self.source)
        g = build_model(fit_io(self.networks["mapping"], in_dim=f_in.shape[1], out_dim=f_out.shape[1]), cfg.seed)
        with torch.no_grad():
            g.eval()
            self.history["phase2_initial"] = mse(g(f_in), f_out).item()
        self.history["phase2"] = _fit([g], lambda i: mse(g(f_in[i]), f_out[i]), len(f_in), cfg, "phase 2")
        with torch.no_grad():
            self.history["phase2_final"] = mse(g(f_in), f_out).item()
        _freeze(g)
        self.mapping = g
        self.phase = 2

    def phase3(self):
        self._require(3)
        cfg = self.cfgs["phase3"]
        with torch.no_grad():
            feats = self.mapping(self._bottleneck(self.target))
        g = build_model(fit_io(self.networks["head"], in_dim=feats.shape[1]), cfg.seed)
        y = torch.as_tensor(self.split.train.labels, dtype=torch.float32)
        self.history["phase3"] = _fit([g], lambda i: weighted_bce(g(feats[i]).reshape(-1), y[i], cfg.ccsa.class_weights),
                                      len(y), cfg, "phase 3")
        _freeze(g)
        self.head = g
        self.phase = 3

    def model(self) -> MappingModel:
        if self.phase != 3:
            raise PhaseOrderError("pipeline not trained through phase 3")
        return MappingModel(self.method, self.direction, self.mapping, self.head,
                            target_encoder=self.autoencoders[self.target], encoder_tag=self.fh_tag,
                            extra={"source_autoencoder": self.autoencoders[self.source]})


def _predict_raw(model: ChainModel, x: torch.Tensor) -> torch.Tensor:
    with torch.no_grad():
        return torch.cat([model(x[i : i + PREDICT_BATCH]) for i in range(0, len(x), PREDICT_BATCH)])


def _run_mapping(pipe: FullySupervisedMapping) -> TrainResult:
    start = time.perf_counter()
    pipe.phase1()
    pipe.phase2()
    pipe.phase3()
    model = pipe.model()
    runtime = time.perf_counter() - start
    note = ""
    if pipe.target == "visual":
        note = "audio-to-visual transfer: visual features are usually richer; expect compromised accuracy"
    hist = dict(pipe.history, note=note)
    return TrainResult(model, _record(model, pipe.split.validation, {}, runtime), hist)


def train_fully_supervised_mapping(split: DatasetSplit, direction: str, cfgs: dict[str, TrainConfig],
                                   networks: dict[str, ArchitectureSpec], fh_tag: str = "hidden") -> TrainResult:
    return _run_mapping(FullySupervisedMapping(split, direction, networks, cfgs, fh_tag))


def train_semi_supervised_mapping(split: DatasetSplit, direction: str, cfgs: dict[str, TrainConfig],
                                  networks: dict[str, ArchitectureSpec],
                                  bottleneck_tag: str = "bottleneck") -> TrainResult:
    return _run_mapping(SemiSupervisedMapping(split, direction, networks, cfgs, bottleneck_tag))


# --- multimodal fusion ----------------------------------------------------

def train_fusion(split: DatasetSplit, level: str, cfg: TrainConfig, networks: dict[str, ArchitectureSpec]) -> TrainResult:
    """Data-, feature- or decision-level fusion trained end-to-end with weighted BCE."""
    if level not in ("data", "feature", "decision"):
        raise ConfigError(f"unknown fusion level {level!r}")
    start = time.perf_counter()
    names = ["encoder", "classifier"] if level == "data" else ["visual_encoder", "audio_encoder", "head"]
    nets = {name: build_model(networks[name], cfg.seed + k) for k, name in enumerate(names)}
    if level == "data" and nets["encoder"].spec.input_shape[0] != 2:
        raise ConfigError("data-level fusion encoder needs a 2-channel input")
    model = FusionModel(level, nets)
    xv, xa = _as_input(split.train.visual), _as_input(split.train.audio_spec)
    y = torch.as_tensor(split.train.labels, dtype=torch.float32)

    def loss_fn(idx):
        return weighted_bce(model.forward(xv[idx], xa[idx]).reshape(-1), y[idx], cfg.ccsa.class_weights)

    losses = _fit(list(nets.values()), loss_fn, len(y), cfg, model.method)
    runtime = time.perf_counter() - start
    return TrainResult(model, _record(model, split.validation, {}, runtime), {"loss": losses})


# --- method dispatch ------------------------------------------------------

METHODS = ("visual-only", "audio-only", "semantic-alignment", "fsl-mapping", "ssl-mapping",
           "fusion-data", "fusion-feature", "fusion-decision")

DEFAULT_PRESETS = {
    "visual-only": ["table4.cfg"],
    "audio-only": ["table4.cfg"],
    "semantic-alignment": ["table4.cfg"],
    "fsl-mapping": ["tableA1_phase1.cfg", "tableA1_phase2.cfg", "tableA1_phase3.cfg"],
    "ssl-mapping": ["tableA2_visual_ae.cfg", "tableA2_audio_ae.cfg", "tableA2_mapping.cfg", "tableA2_classifier.cfg"],
    "fusion-data": ["fusion_data.cfg"],
    "fusion-feature": ["fusion_feature.cfg"],
    "fusion-decision": ["fusion_decision.cfg"],
}

MAPPING_PHASES = {
    "fsl-mapping": ("phase1", "phase2", "phase3"),
    "ssl-mapping": ("phase1_visual", "phase1_audio", "phase2", "phase3"),
}


def train_method(method: str, split: DatasetSplit, preset: dict, seed: int = 0, direction: str = "a2v",
                 target: str = "visual", **overrides) -> TrainResult:
    """Train any method from a loaded preset bundle.

    ``overrides`` (epochs, learning_rate, batch_size, ...) apply to every
    phase. ``direction`` applies to the mapping methods, ``target`` to
    semantic alignment.
    """
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    nets = preset["networks"]
    if method in MAPPING_PHASES:
        cfgs = {ph: TrainConfig.from_preset(preset, ph, seed=seed + k, **overrides)
                for k, ph in enumerate(MAPPING_PHASES[method])}
        if method == "fsl-mapping":
            return train_fully_supervised_mapping(split, direction, cfgs, nets, preset.get("fh_tag", "hidden"))
        return train_semi_supervised_mapping(split, direction, cfgs, nets)
    cfg = TrainConfig.from_preset(preset, "main", seed=seed, **overrides)
    if method in ("visual-only", "audio-only"):
        return train_single_modal(split, method.split("-")[0], cfg, nets)
    if method == "semantic-alignment":
        return train_semantic_alignment(split, cfg, nets, target=target)
    return train_fusion(split, method.split("-")[1], cfg, nets)
