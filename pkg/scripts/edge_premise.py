"""Ratio of poisoned to clean edge-feature mass for HUDA/VUDA across kernel gains b*T."""

import argparse

import numpy as np

from convue.attacks import apply_classwise_convolution, make_kernel_set
from convue.epd import edge_features
from convue.imagecore import SeedSpec
from convue.synthetic import texture_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--gains", type=float, nargs="+", default=[0.8, 1.0, 1.25, 1.5, 2.0, 3.0])
    ap.add_argument("--seeds", type=int, default=3)
    args = ap.parse_args()

    print("kind  T  " + "  ".join(f"bT={g:<5g}" for g in args.gains))
    for kind in ("huda", "vuda"):
        for t in (3, 5):
            ratios = np.zeros(len(args.gains))
            for s in range(args.seeds):
                ds = texture_dataset(20, 10, SeedSpec(s, "edges"))
                clean = edge_features(ds.images).sum(axis=1).mean()
                for k, g in enumerate(args.gains):
                    out = apply_classwise_convolution(ds, make_kernel_set(kind, 10, t, g / t, 0.0))
                    ratios[k] += edge_features(out.images).sum(axis=1).mean() / clean / args.seeds
            print(f"{kind}  {t}  " + "  ".join(f"{r:8.3f}" for r in ratios))


if __name__ == "__main__":
    main()
