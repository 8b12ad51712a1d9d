#!/usr/bin/env python3
"""Accuracy of each method as visual pixel noise or audio SNR degrades, on synthetic data.

    python scripts/noise_sweep.py --methods visual-only semantic-alignment fusion-feature --epochs 20
"""

import argparse
import logging

from cmkt.data import SyntheticConfig, generate_synthetic, split_dataset
from cmkt.evaluation import AUDIO_SNRS, VISUAL_SIGMAS, noise_sweep
from cmkt.models import load_preset
from cmkt.training import evaluate_model, train_method


DESK_PRESETS = {
    "visual-only": "desk", "audio-only": "desk", "semantic-alignment": "desk", "fsl-mapping": "desk_fsl",
    "ssl-mapping": "desk_ssl", "fusion-data": "desk_fusion_data", "fusion-feature": "desk_fusion_feature",
    "fusion-decision": "desk_fusion_decision",
}


def method_fn(method, epochs):
    preset = load_preset(DESK_PRESETS[method])

    def fn(split, seed):
        return evaluate_model(train_method(method, split, preset, seed=seed, epochs=epochs).model, split.test).accuracy

    return fn


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--methods", nargs="+", default=["visual-only", "audio-only", "semantic-alignment"])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--sigmas", type=float, nargs="+", default=list(VISUAL_SIGMAS))
    ap.add_argument("--snrs", type=float, nargs="+", default=list(AUDIO_SNRS))
    ap.add_argument("--csv", default="noise.csv")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    split = split_dataset(generate_synthetic(SyntheticConfig(n_samples=args.n)), seed=0)
    result = noise_sweep({m: method_fn(m, args.epochs) for m in args.methods}, split, args.sigmas, args.snrs,
                         args.seeds)
    result.write_csv(args.csv)
    for axis in ("visual", "audio"):
        table = result.table(axis)
        print(f"\n{axis} noise")
        print("level".ljust(10) + "".join(m.ljust(22) for m in args.methods))
        for level, row in table.items():
            print(f"{level:<10g}" + "".join(f"{row[m]:<22.4f}" for m in args.methods))


if __name__ == "__main__":
    main()
