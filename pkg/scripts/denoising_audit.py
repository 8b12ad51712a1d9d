#!/usr/bin/env python3
"""LIME audit: how much of each model's positive mask falls on the nuisance ring,
and which spectrogram rows the audio explanations of the alignment model use.

    python scripts/denoising_audit.py --samples 100 --out audit/
"""

import argparse
import json
import time
from pathlib import Path

import numpy as np
from scipy.stats import binomtest

from cmkt import xai
from cmkt.data import SyntheticConfig, frequency_range, generate_synthetic, nozzle_ring_mask, split_dataset
from cmkt.models import load_preset
from cmkt.training import evaluate_model, train_method


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--samples", type=int, default=100)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--n-perturb", type=int, default=1000)
    ap.add_argument("--k", type=int, default=5)
    ap.add_argument("--correlation", type=float, default=0.4, help="label correlation of the ring brightness")
    ap.add_argument("--jitter", type=float, default=1.0)
    ap.add_argument("--visual-noise", type=float, default=0.3)
    ap.add_argument("--preset", default="desk")
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()

    cfg = SyntheticConfig(n_samples=args.n, seed=args.seed, visual_nuisance_strength=1.0,
                          visual_noise_std=args.visual_noise, nuisance_jitter=args.jitter,
                          nuisance_label_correlation=args.correlation)
    split = split_dataset(generate_synthetic(cfg), seed=args.seed)
    test = split.test
    images = test.visual[: args.samples]
    nozzle = nozzle_ring_mask()
    preset = load_preset(args.preset)
    counts, models = {}, {}
    for method in ("visual-only", "semantic-alignment"):
        t = time.perf_counter()
        model = train_method(method, split, preset, seed=args.seed, epochs=args.epochs).model
        res = xai.intersection_distribution(model, images, nozzle, k=args.k, seed=100, n_perturb=args.n_perturb)
        counts[method], models[method] = res.counts, model
        print(f"{method:20s} accuracy {evaluate_model(model, test).accuracy:.3f}  "
              f"mean overlap {res.mean:6.1f} px  ({time.perf_counter() - t:.0f}s)")
        if args.out:
            args.out.mkdir(parents=True, exist_ok=True)
            xai.dump_explanations(res.explanations, args.out / f"{method}.jsonl", k=args.k)

    diff = counts["semantic-alignment"] - counts["visual-only"]
    lower, higher = int(np.sum(diff < 0)), int(np.sum(diff > 0))
    p = binomtest(lower, lower + higher, 0.5, alternative="greater").pvalue if lower + higher else 1.0
    print(f"sign test: alignment lower on {lower}, higher on {higher}, ties {len(diff) - lower - higher}; p = {p:.2e}")

    # audio explanations of the alignment model, per class
    audio = test.audio_spec[: args.samples]
    expls = xai.explain_many(lambda x: models["semantic-alignment"].predict_inputs(x), audio, seed=200,
                             n_perturb=args.n_perturb)
    masks = [xai.positive_mask(e, args.k) for e in expls]
    hist = xai.frequency_histogram_by_class(masks, test.labels[: args.samples])
    for c, h in hist.items():
        top = np.argsort(-h, kind="stable")[:5]
        ranges = ", ".join(f"{frequency_range(r)[0]:.0f}-{frequency_range(r)[1]:.0f} Hz ({h[r]})" for r in top)
        print(f"class {c} most-used rows: {ranges}")
    if args.out:
        summary = {"config": vars(args) | {"out": str(args.out)}, "lower": lower, "higher": higher, "p": p,
                   "mean": {m: float(c.mean()) for m, c in counts.items()},
                   "frequency_counts": {str(c): h.tolist() for c, h in hist.items()}}
        (args.out / "summary.json").write_text(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
