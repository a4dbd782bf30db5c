"""Modality-ablation study over three training seeds.

Trains with modality dropout and point-cloud noise augmentation
(configs/ablation.cfg), then scores every input mask on the shared test
split, plus a noisy-lidar evaluation that shows the fusion weights
shifting away from the corrupted modality.

Usage:
    python3 scripts/run_ablations.py --workdir runs/ablation
"""

import argparse
import os
import sys
import time
from dataclasses import replace

sys.path.insert(0, os.path.join(os.path.dirname(__file__), os.pardir, "src"))

import numpy as np

from ligar import dataio, train
from ligar.config import load_config
from ligar.fusion import MASK_BY_NAME

REPO = os.path.join(os.path.dirname(__file__), os.pardir)
MASKS = ("all", "video+lidar", "video+text", "video")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default="runs/ablation")
    parser.add_argument("--config",
                        default=os.path.join(REPO, "configs", "ablation.cfg"))
    parser.add_argument("--seeds", type=int, nargs="+", default=[21, 22, 23])
    parser.add_argument("--noise-sigma", type=float, default=0.5)
    args = parser.parse_args()

    cfg = load_config(args.config)
    data = os.path.join(args.workdir, "data")
    if not os.path.exists(os.path.join(data, "manifest.txt")):
        dataio.write_dataset(data, cfg, cfg.seed,
                             {"train": 600, "val": 100, "test": 200})
    samples = dataio.load_split(data, "test", cfg)

    table = {mask: [] for mask in MASKS}
    alphas = {"clean": [], "noisy": []}
    for seed in args.seeds:
        seeded = replace(cfg, seed=seed)
        t0 = time.perf_counter()
        result = train.run_training(seeded, data,
                                    os.path.join(args.workdir, f"run{seed}"))
        print(f"seed {seed}: trained in {time.perf_counter() - t0:.1f}s")
        for mask in MASKS:
            rep = train.evaluate(samples, result["params"], seeded,
                                 MASK_BY_NAME[mask])
            table[mask].append(rep.scene_f1)
            print(f"  mask={mask:<12} scene_f1={rep.scene_f1:.4f} "
                  f"group_mca={rep.group_accuracy:.4f}")
        clean = train.evaluate(samples, result["params"], seeded)
        noisy = train.evaluate(samples, result["params"], seeded,
                               lidar_sigma=args.noise_sigma, noise_seed=97)
        alphas["clean"].append(clean.alpha_lidar)
        alphas["noisy"].append(noisy.alpha_lidar)
        print(f"  alpha_lidar clean={clean.alpha_lidar:.4f} "
              f"sigma={args.noise_sigma}: {noisy.alpha_lidar:.4f}")

    print("\nmean scene F1 by input mask:")
    for mask in MASKS:
        print(f"  {mask:<12} {np.mean(table[mask]):.4f}")
    print(f"mean alpha_lidar clean={np.mean(alphas['clean']):.4f} "
          f"noisy={np.mean(alphas['noisy']):.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
