"""Command-line entry point: ``cmkt <command> [options]``.

Every command writes its outputs, plus a ``manifest.json`` describing the
run, into ``<cache root>/runs/<command>-<hash>``, where the hash covers the
command, its resolved config and the data manifest. The cache root is
``--cache-root``, else ``$CMKT_CACHE``, else ``./cmkt_cache``.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import xai
from .data import store
from .data.synthetic import SyntheticConfig, generate_synthetic, nozzle_ring_mask
from .data.samples import split_dataset
from .evaluation import (
    AUDIO_SNRS, VISUAL_SIGMAS, NoiseSweepResult, noise_sweep, summarize_topk, write_report, write_summary_csv,
)
from .models import load_preset
from .training.config import ConfigError
from .training.pipelines import DEFAULT_PRESETS, METHODS, evaluate_model, load_predictor, save_predictor, train_method
from .training.search import SearchSpace, hyperparameter_search, method_pipeline, read_ledger, select_top_k_and_retrain
from .util import canonical_json, config_hash

log = logging.getLogger("cmkt")


@dataclass
class RunManifest:
    command: str
    config_hash: str
    data_manifest: str | None
    seed: int | None
    config: dict
    started: float = field(default_factory=time.time)
    finished: float | None = None
    outputs: list[str] = field(default_factory=list)

    def write(self, run_dir: Path) -> Path:
        path = run_dir / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True, default=str))
        return path


def cache_root(args) -> Path:
    return Path(args.cache_root or os.environ.get("CMKT_CACHE") or "cmkt_cache")


def _data_hash(data_dir) -> str | None:
    if data_dir is None:
        return None
    if not (Path(data_dir) / "manifest.json").exists():
        raise FileNotFoundError(f"{data_dir} has no manifest.json; run `cmkt preprocess` or `cmkt synth` first")
    return store.manifest_hash(data_dir)


def start_run(args, command: str, config: dict, data_dir=None, seed=None) -> tuple[Path, RunManifest]:
    data = _data_hash(data_dir)
    h = config_hash({"command": command, "config": config, "data": data})
    run_dir = Path(args.out) if getattr(args, "out", None) else cache_root(args) / "runs" / f"{command}-{h}"
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir, RunManifest(command, h, data, seed, config)


def finish_run(run_dir: Path, manifest: RunManifest, outputs) -> None:
    manifest.outputs = [str(Path(p)) for p in outputs]
    manifest.finished = time.time()
    manifest.write(run_dir)
    print(run_dir)


def _presets(method: str, configs) -> dict:
    return load_preset(*(configs or DEFAULT_PRESETS[method]))


def _overrides(args) -> dict:
    return {"epochs": args.epochs, "batch_size": args.batch_size, "learning_rate": args.lr}


# --- commands -------------------------------------------------------------

def cmd_fetch(args):
    print(store.fetch(args.dest, args.record_url))


def cmd_preprocess(args):
    out = store.preprocess(args.raw, args.out_dir, seed=args.seed, ratio=tuple(args.ratio))
    print(out)


def cmd_synth(args):
    cfg = SyntheticConfig(n_samples=args.n, seed=args.seed, shared_signal_strength=args.signal,
                          visual_nuisance_strength=args.nuisance, visual_noise_std=args.visual_noise,
                          audio_noise_std=args.audio_noise, class_ratio=args.class_ratio,
                          nuisance_jitter=args.nuisance_jitter,
                          nuisance_label_correlation=args.nuisance_correlation)
    split = split_dataset(generate_synthetic(cfg), seed=args.seed)
    print(store.save_cache(split, args.out_dir, args.seed, extra={"synthetic": asdict(cfg)}))


def cmd_train(args):
    preset = _presets(args.method, args.config)
    config = {"method": args.method, "presets": args.config or DEFAULT_PRESETS[args.method], "seed": args.seed,
              "direction": args.direction, "target": args.target, **_overrides(args)}
    run_dir, manifest = start_run(args, "train", config, args.data, args.seed)
    split = store.load_cache(args.data)
    result = train_method(args.method, split, preset, seed=args.seed, direction=args.direction,
                          target=args.target, **_overrides(args))
    ckpt = save_predictor(run_dir / "model.npz", result.model, args.seed, {"config_hash": manifest.config_hash})
    report = evaluate_model(result.model, split.test, args.method, result.record.runtime_s, split.validation)
    rep = write_report(run_dir / "report.json", report, config, manifest.data_manifest)
    hist = run_dir / "history.json"
    hist.write_text(canonical_json({"val_accuracy": result.record.val_accuracy, **result.history}))
    finish_run(run_dir, manifest, [ckpt, rep, hist])


def cmd_search(args):
    preset = _presets(args.method, args.config)
    space = SearchSpace(architecture=args.method in ("visual-only", "audio-only", "semantic-alignment")
                        and not args.rates_only)
    config = {"method": args.method, "presets": args.config or DEFAULT_PRESETS[args.method], "trials": args.trials,
              "strategy": args.strategy, "seed": args.seed, "space": asdict(space), **_overrides(args)}
    run_dir, manifest = start_run(args, "search", config, args.data, args.seed)
    ledger = run_dir / "ledger.csv"
    if ledger.exists():
        ledger.unlink()
    split = store.load_cache(args.data)
    pipeline = method_pipeline(args.method, split, preset, space, direction=args.direction, target=args.target,
                               **_overrides(args))
    hyperparameter_search(space, pipeline, args.trials, args.seed, args.strategy, ledger,
                          run_dir / "checkpoints" if args.keep_checkpoints else None)
    (run_dir / "search.json").write_text(canonical_json(config))
    finish_run(run_dir, manifest, [ledger])


def cmd_evaluate(args):
    model, ckpt_manifest = load_predictor(args.checkpoint)
    config = {"checkpoint": str(args.checkpoint), "part": args.part, "meta": ckpt_manifest["meta"]}
    run_dir, manifest = start_run(args, "evaluate", config, args.data)
    split = store.load_cache(args.data)
    report = evaluate_model(model, getattr(split, args.part), model.method, runtime_data=split.validation)
    rep = write_report(run_dir / "report.json", report, config, manifest.data_manifest)
    finish_run(run_dir, manifest, [rep])


def cmd_explain(args):
    model, ckpt_manifest = load_predictor(args.checkpoint)
    modality = args.modality or getattr(model, "target", None) or getattr(model, "modality", "visual")
    config = {"checkpoint": str(args.checkpoint), "n": args.n, "k": args.k, "seed": args.seed, "modality": modality,
              "n_perturb": args.n_perturb, "nozzle_mask": str(args.nozzle_mask)}
    run_dir, manifest = start_run(args, "explain", config, args.data, args.seed)
    split = store.load_cache(args.data)
    test = split.test.subset(np.arange(min(args.n, len(split.test))))
    if not hasattr(model, "predict_inputs"):
        raise ConfigError(f"{model.method} takes both modalities; explanations need a single-input model")
    images = test.modality(modality)
    expls = xai.explain_many(model, images, args.seed, n_perturb=args.n_perturb)
    for e, idx in zip(expls, test.index):
        e.index = int(idx)
    outputs = [xai.dump_explanations(expls, run_dir / "explanations.jsonl", args.k)]
    masks = [xai.positive_mask(e, args.k) for e in expls]
    summary = {"n": len(expls), "mean_fidelity": float(np.mean([e.fidelity for e in expls])),
               "mean_positive_superpixels": float(np.mean([e.n_positive for e in expls]))}
    if modality == "visual":
        nozzle = xai.read_mask(args.nozzle_mask) if args.nozzle_mask else nozzle_ring_mask()
        res = xai.intersection_distribution(model, images, nozzle, args.k, explanations=expls)
        np.savetxt(run_dir / "intersections.csv", res.counts, fmt="%d", header="count")
        outputs.append(run_dir / "intersections.csv")
        summary["mean_intersection"] = res.mean
    else:
        hist = xai.frequency_histogram_by_class(masks, test.labels)
        rows = np.column_stack([np.arange(80), np.arange(80) * 275.625, hist[0], hist[1]])
        np.savetxt(run_dir / "frequency_counts.csv", rows, fmt=["%d", "%.3f", "%d", "%d"], delimiter=",",
                   header="row,low_hz,defect_free,defective", comments="")
        outputs.append(run_dir / "frequency_counts.csv")
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    finish_run(run_dir, manifest, outputs + [run_dir / "summary.json"])


def _level(s: str) -> float:
    return math.inf if s.lower() in ("inf", "clean") else float(s)


def cmd_noise_sweep(args):
    methods = args.methods or ["visual-only", "audio-only", "semantic-alignment"]
    config = {"methods": methods, "seeds": args.seeds, "visual_sigmas": args.sigmas, "audio_snrs": args.snrs,
              "presets": args.config, **_overrides(args)}
    run_dir, manifest = start_run(args, "noise-sweep", config, args.data)
    split = store.load_cache(args.data)

    def runner(method):
        preset = _presets(method, args.config)

        def run(noisy, seed):
            res = train_method(method, noisy, preset, seed=seed, direction=args.direction, **_overrides(args))
            return evaluate_model(res.model, noisy.test).accuracy

        return run

    result = noise_sweep({m: runner(m) for m in methods}, split, [float(s) for s in args.sigmas],
                         [_level(s) for s in args.snrs], args.seeds)
    out = result.write_csv(run_dir / "noise.csv")
    finish_run(run_dir, manifest, [out])


def _read_noise_csv(path) -> NoiseSweepResult:
    import csv

    with open(path, newline="") as fh:
        rows = [{**r, "level": float(r["level"]), "seed": int(r["seed"]), "accuracy": float(r["accuracy"])}
                for r in csv.DictReader(fh)]
    return NoiseSweepResult(rows)


def cmd_report(args):
    config = {"ledgers": [str(p) for p in args.ledger], "top_k": args.top_k, "noise": [str(p) for p in args.noise],
              **_overrides(args)}
    run_dir, manifest = start_run(args, "report", config, args.data)
    outputs = []
    if args.ledger:
        split = store.load_cache(args.data)
        summaries = {}
        for ledger in args.ledger:
            search = json.loads((Path(ledger).parent / "search.json").read_text())
            method = search["method"]
            preset = _presets(method, search["presets"])
            space = SearchSpace(**{k: tuple(v) if isinstance(v, list) else v for k, v in search["space"].items()})
            overrides = {k: search.get(k) for k in ("epochs", "batch_size", "learning_rate")}
            overrides.update({k: v for k, v in _overrides(args).items() if v is not None})
            retrain = method_pipeline(method, split, preset, space, **overrides)
            pairs = select_top_k_and_retrain(read_ledger(ledger), args.top_k, retrain, split.test,
                                             runtime_data=split.validation)
            summaries[method] = summarize_topk([r for _, r in pairs])
        outputs.append(write_summary_csv(summaries, run_dir / "summary.csv"))
        (run_dir / "summary.json").write_text(json.dumps(summaries, indent=2, sort_keys=True))
        outputs.append(run_dir / "summary.json")
    for path in args.noise:
        res = _read_noise_csv(path)
        for axis in ("visual", "audio"):
            table = res.table(axis)
            methods = sorted({m for row in table.values() for m in row})
            lines = [",".join(["level", *methods])]
            for level in sorted(table, key=lambda x: (-x if axis == "audio" else x)):
                cells = [f"{np.mean(_accs(res, axis, level, m)):.4f}" for m in methods]
                lines.append(",".join([str(level), *cells]))
            out = run_dir / f"noise_{axis}_{Path(path).parent.name}.csv"
            out.write_text("\n".join(lines) + "\n")
            outputs.append(out)
    if not outputs:
        raise ConfigError("nothing to report: pass --ledger and/or --noise")
    finish_run(run_dir, manifest, outputs)


def _accs(res: NoiseSweepResult, axis, level, method):
    return [r["accuracy"] for r in res.rows if r["axis"] == axis and r["level"] == level and r["method"] == method]


# --- parser ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cmkt", description="Cross-modality knowledge transfer experiments.")
    p.add_argument("--cache-root", help="root for run directories (default $CMKT_CACHE or ./cmkt_cache)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True, train=True):
        sp.add_argument("--out", help="explicit run directory instead of the hashed one")
        if data:
            sp.add_argument("--data", required=True, help="preprocessed cache directory")
        if train:
            sp.add_argument("--method", choices=METHODS, default="semantic-alignment")
            sp.add_argument("--config", action="append", help="preset name or path (repeatable; merged in order)")
            sp.add_argument("--direction", choices=["v2a", "a2v"], default="a2v")
            sp.add_argument("--target", choices=["visual", "audio"], default="visual")
            sp.add_argument("--seed", type=int, default=0)
            sp.add_argument("--epochs", type=int)
            sp.add_argument("--batch-size", type=int)
            sp.add_argument("--lr", type=float)

    sp = sub.add_parser("fetch", help="download and unpack the public dataset")
    sp.add_argument("--dest", required=True)
    sp.add_argument("--record-url", default=store.ZENODO_RECORD)
    sp.set_defaults(fn=cmd_fetch)

    sp = sub.add_parser("preprocess", help="raw frames/audio/labels -> split array cache")
    sp.add_argument("--raw", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--ratio", type=int, nargs=3, default=[8, 1, 1])
    sp.set_defaults(fn=cmd_preprocess)

    sp = sub.add_parser("synth", help="write a synthetic paired dataset cache")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--n", type=int, default=2000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--signal", type=float, default=1.5)
    sp.add_argument("--nuisance", type=float, default=0.0)
    sp.add_argument("--visual-noise", type=float, default=0.0)
    sp.add_argument("--audio-noise", type=float, default=0.0)
    sp.add_argument("--class-ratio", type=float, default=0.25)
    sp.add_argument("--nuisance-jitter", type=float, default=0.0, help="per-image ring brightness variation in [0, 1]")
    sp.add_argument("--nuisance-correlation", type=float, default=0.0,
                    help="how strongly ring brightness tracks the label, in [0, 1]")
    sp.set_defaults(fn=cmd_synth)

    sp = sub.add_parser("train", help="train one method, save checkpoint and test report")
    common(sp)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("search", help="hyperparameter search with an append-only trial ledger")
    common(sp)
    sp.add_argument("--trials", type=int, default=300)
    sp.add_argument("--strategy", choices=["tpe", "random"], default="tpe")
    sp.add_argument("--rates-only", action="store_true", help="keep the preset architecture")
    sp.add_argument("--keep-checkpoints", action="store_true")
    sp.set_defaults(fn=cmd_search)

    sp = sub.add_parser("evaluate", help="metrics of a checkpoint on one split part")
    common(sp, train=False)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--part", choices=["train", "validation", "test"], default="test")
    sp.set_defaults(fn=cmd_evaluate)

    sp = sub.add_parser("explain", help="LIME explanations plus nozzle / frequency audits")
    common(sp, train=False)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--modality", choices=["visual", "audio"])
    sp.add_argument("--n", type=int, default=100, help="number of test samples")
    sp.add_argument("--k", type=int, default=5)
    sp.add_argument("--n-perturb", type=int, default=1000)
    sp.add_argument("--nozzle-mask", help="80x80 mask file (PNG or text); default: synthetic ring")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_explain)

    sp = sub.add_parser("noise-sweep", help="retrain methods under visual/audio AWGN")
    common(sp)
    sp.set_defaults(method=None)
    sp.add_argument("--methods", nargs="+", choices=METHODS)
    sp.add_argument("--seeds", type=int, nargs="+", default=[0])
    sp.add_argument("--sigmas", nargs="+", default=[str(s) for s in VISUAL_SIGMAS])
    sp.add_argument("--snrs", nargs="+", default=[str(s) for s in AUDIO_SNRS])
    sp.set_defaults(fn=cmd_noise_sweep)

    sp = sub.add_parser("report", help="top-k (mean, max, min) tables and noise tables")
    common(sp, data=False, train=False)
    sp.add_argument("--data", help="cache directory (needed with --ledger)")
    sp.add_argument("--ledger", action="append", default=[], help="ledger.csv from a search run (repeatable)")
    sp.add_argument("--noise", action="append", default=[], help="noise.csv from a noise-sweep run (repeatable)")
    sp.add_argument("--top-k", type=int, default=50)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--lr", type=float)
    sp.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.fn(args)
    except (ConfigError, FileNotFoundError, store.DatasetFormatError, ValueError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
