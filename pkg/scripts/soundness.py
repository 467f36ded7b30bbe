"""Bound-vs-gap soundness over seeds for the logistic and MLP classifiers."""
import argparse
import time

import numpy as np

from omnibounds.experiments import SoundnessConfig, soundness_cell


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--models", default="logistic,mlp")
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--steps", type=int, default=500)
    args = ap.parse_args()
    for model in args.models.split(","):
        cfg = SoundnessConfig(model=model, steps=args.steps)
        t0 = time.time()
        rows = {}
        for seed in range(args.seeds):
            for r in soundness_cell(cfg, seed):
                key = r.name if r.lam is None else f"{r.name}@{r.lam:g}"
                rows.setdefault(key, []).append((r.total, r.measured_gap, r.penalty))
        print(f"{model}: {args.seeds} seeds in {time.time() - t0:.1f}s")
        for key, vals in rows.items():
            v = np.array(vals)
            print(f"  {key:16s} holds={np.mean(v[:, 0] >= v[:, 1]):.2f}"
                  f"  median total={np.median(v[:, 0]):.4f}  gap={np.median(v[:, 1]):.4f}"
                  f"  penalty={np.median(v[:, 2]):.4f}")


if __name__ == "__main__":
    main()
