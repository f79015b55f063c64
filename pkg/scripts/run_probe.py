"""Linear-probe view of poisoning and the COIN defense on a 2-class subset.

Uses CIFAR-10 binary batches when --cifar-dir is given, else synthetic classes.
"""

import argparse
import json

from convue.imagecore import SeedSpec
from convue.pipeline import ProbeSettings, experiment_probe_defense


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--cifar-dir", default=None)
    ap.add_argument("--kind", default="cuda", choices=["cuda", "huda", "vuda"])
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--lr", type=float, default=0.5)
    ap.add_argument("--t", type=int, default=3)
    ap.add_argument("--blur-base", type=float, default=0.3)
    ap.add_argument("--alpha", type=float, default=2.0)
    ap.add_argument("--separation", type=float, default=0.2)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    args = ap.parse_args()

    settings = ProbeSettings(
        epochs=args.epochs, lr=args.lr, kind=args.kind, t=args.t, blur_base=args.blur_base,
        alpha=args.alpha, separation=args.separation,
    )
    for s in args.seeds:
        res = experiment_probe_defense(SeedSpec(s, "probe"), settings, args.cifar_dir)
        print(json.dumps({"seed": s, **res}, sort_keys=True))


if __name__ == "__main__":
    main()
