"""Edge-pixel detection on synthetic pools, with an optional blur-strength sweep.

Prints one line per setting: the families in the pool and the held-out ACC/AUC.
"""

import argparse
import json

from convue.imagecore import SeedSpec
from convue.pipeline import ALL_FAMILIES, DetectionSettings, experiment_detection_setting

SETTINGS = {
    "mixed": list(ALL_FAMILIES),
    "conv_vs_bounded": ["cuda", "huda", "vuda", "ops_like", "lsp_like", "urp_like"],
    "cuda_vs_clean": ["cuda", "clean"],
    "huda_vs_clean": ["huda", "clean"],
    "vuda_vs_clean": ["vuda", "clean"],
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--setting", choices=sorted(SETTINGS) + ["all"], default="all")
    ap.add_argument("--blur-base", type=float, nargs="+", default=[0.3])
    ap.add_argument("--pool-size", type=int, default=6000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", action="store_true", help="print JSON lines instead of a table")
    args = ap.parse_args()

    names = sorted(SETTINGS) if args.setting == "all" else [args.setting]
    for blur in args.blur_base:
        for name in names:
            settings = DetectionSettings(pool_size=args.pool_size, blur_base=blur)
            rep = experiment_detection_setting(SETTINGS[name], SeedSpec(args.seed, "detect"), settings)
            if args.json:
                print(json.dumps({"setting": name, "blur_base": blur, **rep.to_dict()}, sort_keys=True))
            else:
                print(f"{name:16s} blur_base={blur:<5g} ACC={rep.acc:6.2f}%  AUC={rep.auc:.3f}")


if __name__ == "__main__":
    main()
