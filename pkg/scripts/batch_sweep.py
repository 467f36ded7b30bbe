"""Batch-size sweep at fixed learning rate: does the bound track the gap?"""
import argparse

from scipy.stats import spearmanr

from omnibounds.experiments import SoundnessConfig, batch_size_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", default="logistic")
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--batch-sizes", default="8,16,32,64")
    args = ap.parse_args()
    sizes = tuple(int(b) for b in args.batch_sizes.split(","))
    points = batch_size_sweep(SoundnessConfig(model=args.model), sizes, range(args.seeds))
    keys = list(points[0].totals)
    print("batch  gap      " + "  ".join(f"{k:>14s}" for k in keys))
    for p in points:
        print(f"{p.batch_size:5d}  {p.gap:.4f}  " + "  ".join(f"{p.totals[k]:14.4f}" for k in keys))
    gaps = [p.gap for p in points]
    for k in keys:
        rho = spearmanr(gaps, [p.totals[k] for p in points]).statistic
        print(f"spearman(gap, {k}) = {rho:+.2f}")


if __name__ == "__main__":
    main()
