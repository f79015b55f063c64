"""Write seeded synthetic train/test UEDS files for trying out the CLI."""

import argparse
from pathlib import Path

from convue.imagecore import SeedSpec, save_ueds
from convue.synthetic import class_prototypes, texture_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="data")
    ap.add_argument("--classes", type=int, default=10)
    ap.add_argument("--train-per-class", type=int, default=500)
    ap.add_argument("--test-per-class", type=int, default=100)
    ap.add_argument("--size", type=int, default=32)
    ap.add_argument("--separation", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = SeedSpec(args.seed, "synthetic")
    protos = class_prototypes(args.classes, seed, args.size)
    common = dict(size=args.size, protos=protos, separation=args.separation)
    train = texture_dataset(args.train_per_class, args.classes, seed, **common)
    test = texture_dataset(args.test_per_class, args.classes, seed, index_offset=10**7, **common)
    save_ueds(train, out / "train.ueds")
    save_ueds(test, out / "test.ueds")
    print(f"wrote {len(train)} train and {len(test)} test images to {out}/")


if __name__ == "__main__":
    main()
