"""Command line front end and the seeded image-level experiments.

Every subcommand prints a one-line JSON summary on stdout that echoes the fully
resolved configuration. Exit status is 0 on success, 1 for usage errors and 2
for unreadable or malformed data.

    python3 -m convue attack --kind huda --in clean.ueds --out huda.ueds --seed 3
    python3 -m convue gmm sweep --mode imc --out table.csv
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import attacks, coin, epd, evalkit, gmmlab
from .imagecore import (
    FormatError,
    ImageTensor,
    LabeledDataset,
    SeedSpec,
    atomic_write_bytes,
    atomic_write_text,
    export_png,
    import_png,
    load_cifar10_batch,
    load_ueds,
    save_cifar10_batch,
    ueds_bytes,
)
from .synthetic import class_prototypes, texture_dataset

SEED_ENV = "CONVUE_SEED"
CONV_FAMILIES = ("cuda", "huda", "vuda")
BOUNDED_FAMILIES = ("ops_like", "lsp_like", "urp_like")
ALL_FAMILIES = CONV_FAMILIES + BOUNDED_FAMILIES + ("clean",)


class UsageError(Exception):
    pass


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV, "0")
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


# --------------------------------------------------------------------------- #
# detection experiment


@dataclass
class DetectionSettings:
    pool_size: int = 6000
    class_count: int = 10
    size: int = 32
    t: int = 3
    blur_base: float = 0.3
    blur_step: float = 0.02
    epsilon: float = 8 / 255
    patch_size: int = 8
    c_p: float = epd.DEFAULT_CP
    theta: float = epd.DEFAULT_THETA
    epochs: int = epd.DEFAULT_EPOCHS
    train_fraction: float = 0.8


def _interleaved_images(count: int, class_count: int, seed: SeedSpec, size: int) -> LabeledDataset:
    """``count`` synthetic images with classes as even as possible."""
    per_class = -(-count // class_count)
    ds = texture_dataset(per_class, class_count, seed, size=size)
    # sample i of every class before sample i + 1 of any class
    order = np.argsort(np.tile(np.arange(per_class), class_count), kind="stable")
    return ds.subset(order[:count])


def family_dataset(family: str, base: LabeledDataset, settings: DetectionSettings, seed: SeedSpec) -> LabeledDataset:
    """Turn clean images into one member of the detection pool."""
    if family == "clean":
        return base
    if family in CONV_FAMILIES:
        ks = attacks.make_kernel_set(
            family, base.class_count, settings.t, settings.blur_base, settings.blur_step, seed.child(f"kernel/{family}")
        )
        return attacks.apply_classwise_convolution(base, ks)
    if family in BOUNDED_FAMILIES:
        spec = attacks.BoundedNoiseSpec(family, settings.epsilon, settings.patch_size)
        return attacks.apply_bounded_noise(base, spec, seed.child(f"noise/{family}"))
    raise ValueError(f"unknown family {family!r}; choose from {', '.join(ALL_FAMILIES)}")


def detection_pool(families, seed: SeedSpec, settings: DetectionSettings | None = None):
    """Per-family (images, labels) with an even share of the pool for each family."""
    settings = settings or DetectionSettings()
    families = [f.lower() for f in families]
    pos = [f for f in families if f in CONV_FAMILIES]
    neg = [f for f in families if f not in CONV_FAMILIES]
    if not pos or not neg:
        raise ValueError("the pool needs at least one convolutional and one non-convolutional family")
    if len(set(families)) != len(families):
        raise ValueError("families must be distinct")
    share, extra = divmod(settings.pool_size, len(families))
    pool = {}
    for k, fam in enumerate(families):
        count = share + (1 if k < extra else 0)
        base = _interleaved_images(count, settings.class_count, seed.child(f"images/{fam}"), settings.size)
        pool[fam] = family_dataset(fam, base, settings, seed)
    return pool


def experiment_detection_setting(
    families, seed: SeedSpec, settings: DetectionSettings | None = None, shuffle_labels: bool = False
) -> evalkit.DetectionReport:
    """Train EPD on 80% of every family and report on the held-out 20%.

    With ``shuffle_labels`` the detector labels are permuted across the whole
    pool before splitting, so they carry no information about the images.
    """
    settings = settings or DetectionSettings()
    pool = detection_pool(families, seed, settings)
    feats = [epd.edge_features(ds.images) for ds in pool.values()]
    targets = np.concatenate([np.full(len(f), int(fam in CONV_FAMILIES)) for fam, f in zip(pool, feats)])
    if shuffle_labels:
        targets = seed.child("shuffle").generator(0).permutation(targets)
    split_seed = seed.child("split")
    xtr, ytr, xte, yte = [], [], [], []
    start = 0
    for k, f in enumerate(feats):
        target = targets[start : start + len(f)]
        start += len(f)
        perm = split_seed.generator(k).permutation(len(f))
        cut = int(round(settings.train_fraction * len(f)))
        xtr.append(f[perm[:cut]])
        ytr.append(target[perm[:cut]])
        xte.append(f[perm[cut:]])
        yte.append(target[perm[cut:]])
    ytr = np.concatenate(ytr)
    model = epd.train_svm(np.concatenate(xtr), ytr, settings.c_p, settings.epochs)
    scores = epd.decision_scores(model, np.concatenate(xte))
    return evalkit.DetectionReport.from_scores(scores, np.concatenate(yte), settings.theta)


# --------------------------------------------------------------------------- #
# probe experiment


@dataclass
class ProbeSettings:
    classes: tuple = (0, 1)
    n_train: int = 1000  # per class
    n_test: int = 500  # per class
    epochs: int = 100
    lr: float = 0.5
    kind: str = "cuda"
    t: int = 3
    blur_base: float = 0.3
    blur_step: float = 0.02
    alpha: float = coin.DEFAULT_ALPHA
    separation: float = 0.2  # synthetic data only


def _relabel(ds: LabeledDataset, classes, per_class: int) -> LabeledDataset:
    picks = [np.flatnonzero(ds.labels == c)[:per_class] for c in classes]
    if any(len(p) < per_class for p in picks):
        raise ValueError(f"not enough images of classes {classes} for {per_class} per class")
    idx = np.concatenate(picks)
    labels = np.concatenate([np.full(per_class, k) for k in range(len(classes))])
    return LabeledDataset(ds.images[idx], labels, len(classes))


def probe_data(settings: ProbeSettings, seed: SeedSpec, cifar_dir=None):
    """Clean train/test splits: CIFAR-10 classes if a batch directory is given, else synthetic."""
    if cifar_dir is not None:
        cifar_dir = Path(cifar_dir)
        batches = sorted(cifar_dir.glob("data_batch_*.bin"))
        if not batches:
            raise FormatError(f"no data_batch_*.bin files in {cifar_dir}")
        train_all = [load_cifar10_batch(p) for p in batches]
        train = LabeledDataset(
            np.concatenate([d.images for d in train_all]), np.concatenate([d.labels for d in train_all]), 10
        )
        test = load_cifar10_batch(cifar_dir / "test_batch.bin")
        return _relabel(train, settings.classes, settings.n_train), _relabel(test, settings.classes, settings.n_test)
    k = len(settings.classes)
    protos = class_prototypes(k, seed.child("data"))
    train = texture_dataset(settings.n_train, k, seed.child("data"), protos=protos, separation=settings.separation)
    test = texture_dataset(
        settings.n_test, k, seed.child("data"), protos=protos, separation=settings.separation, index_offset=10**7
    )
    return train, test


def experiment_probe_defense(seed: SeedSpec, settings: ProbeSettings | None = None, cifar_dir=None) -> dict:
    """Clean baseline, poisoned and COIN-defended probe accuracy on clean test data."""
    settings = settings or ProbeSettings()
    train, test = probe_data(settings, seed, cifar_dir)
    ks = attacks.make_kernel_set(
        settings.kind, train.class_count, settings.t, settings.blur_base, settings.blur_step, seed.child("kernel")
    )
    poisoned = attacks.apply_classwise_convolution(train, ks)
    defended = coin.defend_dataset(poisoned, settings.alpha, seed.child("coin"))

    def acc(ds):
        return evalkit.eval_probe(evalkit.train_probe(ds, settings.epochs, settings.lr), test)

    base, pois, dfd = acc(train), acc(poisoned), acc(defended)
    drop = base - pois
    return {
        "baseline": base,
        "poisoned": pois,
        "defended": dfd,
        "drop_points": 100.0 * drop,
        "recovered_fraction": (dfd - pois) / drop if drop > 0 else float("nan"),
        "source": "cifar10" if cifar_dir is not None else "synthetic",
    }


# --------------------------------------------------------------------------- #
# CLI


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _float_list(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _path_list(text: str) -> tuple:
    return tuple(p for p in text.split(",") if p)


def build_parser() -> _Parser:
    p = _Parser(prog="convue", description="Convolution-based unlearnable examples: attacks, COIN, EPD, GMM lab.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    leaves = p.leaves = []

    def leaf(parent, name, help_text):
        sp = parent.add_parser(name, help=help_text)
        sp.add_argument("--config", help="flat key = value file; explicit flags win")
        sp.add_argument("--seed", type=int, default=None, help=f"master seed (default ${SEED_ENV} or 0)")
        sp.set_defaults(_leaf=sp)
        leaves.append(sp)
        return sp

    a = leaf(sub, "attack", "poison a UEDS dataset")
    a.add_argument("--kind", required=True, choices=[k.value for k in attacks.KernelKind] + list(BOUNDED_FAMILIES))
    a.add_argument("--t", type=int, default=3)
    a.add_argument("--blur-base", type=float, default=0.3)
    a.add_argument("--blur-step", type=float, default=0.02)
    a.add_argument("--epsilon", type=float, default=8 / 255)
    a.add_argument("--patch-size", type=int, default=8)
    a.add_argument("--in", dest="inp", required=True)
    a.add_argument("--out", required=True)

    d = sub.add_parser("defend", help="defenses")
    dsub = d.add_subparsers(dest="defense", parser_class=_Parser)
    dc = leaf(dsub, "coin", "apply COIN to every image")
    dc.add_argument("--alpha", type=float, default=coin.DEFAULT_ALPHA)
    dc.add_argument("--in", dest="inp", required=True)
    dc.add_argument("--out", required=True)

    det = sub.add_parser("detect", help="edge pixel detector")
    detsub = det.add_subparsers(dest="action", parser_class=_Parser)
    tr = leaf(detsub, "train", "fit the detector")
    tr.add_argument("--pos", type=_path_list, required=True)
    tr.add_argument("--neg", type=_path_list, required=True)
    tr.add_argument("--cp", type=float, default=epd.DEFAULT_CP)
    tr.add_argument("--epochs", type=int, default=epd.DEFAULT_EPOCHS)
    tr.add_argument("--out", required=True)
    ev = leaf(detsub, "eval", "score held-out data")
    ev.add_argument("--model", required=True)
    ev.add_argument("--pos", type=_path_list, required=True)
    ev.add_argument("--neg", type=_path_list, required=True)
    ev.add_argument("--theta", type=float, default=epd.DEFAULT_THETA)
    ev.add_argument("--scores-csv", default=None)
    ev.add_argument("--out", default=None, help="also write the report JSON here")
    ro = leaf(detsub, "route", "apply COIN to flagged images only")
    ro.add_argument("--model", required=True)
    ro.add_argument("--alpha", type=float, default=coin.DEFAULT_ALPHA)
    ro.add_argument("--theta", type=float, default=epd.DEFAULT_THETA)
    ro.add_argument("--in", dest="inp", required=True)
    ro.add_argument("--out", required=True)

    g = sub.add_parser("gmm", help="Gaussian mixture laboratory")
    gsub = g.add_subparsers(dest="action", parser_class=_Parser)
    sw = leaf(gsub, "sweep", "hypothesis sweep")
    sw.add_argument("--mode", required=True, choices=["imc", "imi"])
    sw.add_argument("--d", type=int, default=10)
    sw.add_argument("--n", type=int, default=5000)
    sw.add_argument("--a-pos", type=float, default=0.9)
    sw.add_argument("--a-neg", type=float, default=0.5)
    sw.add_argument("--jitter", type=float, default=0.0)
    sw.add_argument("--grid", type=_float_list, default=None)
    sw.add_argument("--alpha", type=float, default=0.5)
    sw.add_argument("--classifier", choices=sorted(gmmlab.CLASSIFIERS), default="bayes")
    sw.add_argument("--out", required=True)
    de = leaf(gsub, "defend-eval", "accuracy with and without the random matrix")
    de.add_argument("--d", type=int, default=10)
    de.add_argument("--n", type=int, default=5000)
    de.add_argument("--a-pos", type=float, default=0.9)
    de.add_argument("--a-negs", type=_float_list, default=(0.3, 0.5, 0.7))
    de.add_argument("--alpha", type=float, default=0.5)
    de.add_argument("--classifier", choices=sorted(gmmlab.CLASSIFIERS), default="bayes")
    de.add_argument("--out", required=True)

    pr = leaf(sub, "probe", "train the linear probe and score clean test data")
    pr.add_argument("--train", required=True)
    pr.add_argument("--test", required=True)
    pr.add_argument("--epochs", type=int, default=100)
    pr.add_argument("--lr", type=float, default=0.5)
    pr.add_argument("--out", default=None)

    cv = leaf(sub, "convert", "convert between CIFAR-10 .bin, UEDS and PNG")
    cv.add_argument("--in", dest="inp", required=True)
    cv.add_argument("--out", required=True)
    cv.add_argument("--label", type=int, default=0, help="label for a PNG input")
    cv.add_argument("--index", type=int, default=0, help="record to export as PNG")
    return p


def read_config(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _apply_config(leaf: argparse.ArgumentParser, cfg: dict) -> None:
    actions = {a.dest: a for a in leaf._actions if a.dest not in ("help", "config")}
    defaults = {}
    for key, raw in cfg.items():
        dest = "inp" if key == "in" else key
        if dest not in actions:
            raise UsageError(f"unknown config key {key!r} for {leaf.prog}")
        act = actions[dest]
        try:
            value = act.type(raw) if act.type else raw
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise UsageError(f"config key {key!r}: {exc}") from None
        if act.choices is not None and value not in act.choices:
            raise UsageError(f"config key {key!r}: {value!r} not in {sorted(act.choices)}")
        defaults[dest] = value
        act.required = False
    leaf.set_defaults(**defaults)


def parse(argv) -> argparse.Namespace:
    parser = build_parser()
    if "--config" in argv:
        # first pass only locates the subcommand and the config path
        required = [a for leaf in parser.leaves for a in leaf._actions if a.required]
        for a in required:
            a.required = False
        first = parser.parse_known_args(argv)[0]
        for a in required:
            a.required = True
        if getattr(first, "_leaf", None) is not None and first.config:
            try:
                cfg = read_config(first.config)
            except OSError as exc:
                raise UsageError(f"cannot read config: {exc}") from None
            _apply_config(first._leaf, cfg)
    args = parser.parse_args(argv)
    if getattr(args, "_leaf", None) is None:
        parser.print_usage(sys.stderr)
        raise UsageError("a subcommand is required")
    if args.seed is None:
        args.seed = default_seed()
    return args


def resolved_config(args: argparse.Namespace) -> dict:
    cfg = {}
    for k, v in sorted(vars(args).items()):
        if k.startswith("_"):
            continue
        cfg["in" if k == "inp" else k] = list(v) if isinstance(v, tuple) else v
    return cfg


def _load_many(paths) -> list[LabeledDataset]:
    return [load_ueds(p) for p in paths]


def _labelled_features(pos, neg):
    feats, labels = [], []
    for ds, y in [(d, 1) for d in _load_many(pos)] + [(d, 0) for d in _load_many(neg)]:
        feats.append(epd.edge_features(ds.images))
        labels.append(np.full(len(ds), y))
    return np.concatenate(feats), np.concatenate(labels)


def _cmd_attack(args) -> dict:
    ds = load_ueds(args.inp)
    seed = SeedSpec(args.seed, "attack")
    if args.kind in BOUNDED_FAMILIES:
        out = attacks.apply_bounded_noise(ds, attacks.BoundedNoiseSpec(args.kind, args.epsilon, args.patch_size), seed)
        extra = {}
    else:
        ks = attacks.make_kernel_set(args.kind, ds.class_count, args.t, args.blur_base, args.blur_step, seed)
        out = attacks.apply_classwise_convolution(ds, ks)
        extra = {"blur_params": list(ks.blur_params)}
    atomic_write_bytes(args.out, ueds_bytes(out))
    return {"images": len(out), **extra}


def _cmd_defend(args) -> dict:
    ds = load_ueds(args.inp)
    out = coin.defend_dataset(ds, args.alpha, SeedSpec(args.seed, "coin"))
    atomic_write_bytes(args.out, ueds_bytes(out))
    return {"images": len(out)}


def _cmd_detect(args) -> dict:
    if args.action == "train":
        x, y = _labelled_features(args.pos, args.neg)
        model = epd.train_svm(x, y, args.cp, args.epochs)
        model.save(args.out)
        return {"train_size": int(y.size), "w": model.w.tolist(), "b": model.b}
    model = epd.LinearSvmModel.load(args.model)
    if args.action == "eval":
        x, y = _labelled_features(args.pos, args.neg)
        scores = epd.decision_scores(model, x)
        report = evalkit.DetectionReport.from_scores(scores, y, args.theta)
        if args.scores_csv:
            atomic_write_text(args.scores_csv, evalkit.scores_csv(scores, y))
        if args.out:
            atomic_write_text(args.out, report.to_json() + "\n")
        return report.to_dict()
    ds = load_ueds(args.inp)
    routed, flags = epd.route_dataset(model, ds, args.alpha, SeedSpec(args.seed, "coin"), args.theta)
    atomic_write_bytes(args.out, ueds_bytes(routed))
    return {"images": len(ds), "flagged": int(flags.sum())}


def _cmd_gmm(args) -> dict:
    cfg = gmmlab.GmmConfig(d=args.d, n_per_class=args.n)
    seed = SeedSpec(args.seed, "gmm")
    if args.action == "sweep":
        grid = args.grid or (gmmlab.DEFAULT_IMC_GRID if args.mode == "imc" else gmmlab.DEFAULT_IMI_GRID)
        rows = gmmlab.run_hypothesis_experiment(
            args.mode, grid, cfg, seed, a_pos=args.a_pos, a_neg=args.a_neg, jitter=args.jitter,
            alpha=args.alpha, classifier=args.classifier,
        )
        atomic_write_text(args.out, gmmlab.rows_to_csv(rows))
        return {"rows": len(rows), "spearman": gmmlab.trend(rows, args.mode)}
    rows = gmmlab.defense_uplift(cfg, seed, args.a_pos, args.a_negs, args.alpha, args.classifier)
    atomic_write_text(args.out, gmmlab.rows_to_csv(rows))
    return {"uplift": [r.acc_defended - r.acc_poisoned for r in rows]}


def _cmd_probe(args) -> dict:
    train, test = load_ueds(args.train), load_ueds(args.test)
    if test.class_count > train.class_count:
        train = LabeledDataset(train.images, train.labels, test.class_count)
    model = evalkit.train_probe(train, args.epochs, args.lr)
    report = {"accuracy": evalkit.eval_probe(model, test), "final_loss": model.final_loss, "epochs": model.epochs}
    if args.out:
        atomic_write_text(args.out, json.dumps(report, sort_keys=True) + "\n")
    return report


def _read_any(path: str, label: int) -> LabeledDataset:
    suffix = Path(path).suffix.lower()
    if suffix == ".png":
        img = import_png(path)
        return LabeledDataset(img.pixels[None], np.array([label]), label + 1)
    if suffix == ".bin":
        return load_cifar10_batch(path)
    return load_ueds(path)


def _cmd_convert(args) -> dict:
    ds = _read_any(args.inp, args.label)
    suffix = Path(args.out).suffix.lower()
    if suffix == ".png":
        if not 0 <= args.index < len(ds):
            raise UsageError(f"--index {args.index} out of range for {len(ds)} images")
        export_png(ImageTensor(ds.images[args.index]), args.out)
    elif suffix == ".bin":
        save_cifar10_batch(ds, args.out)
    else:
        atomic_write_bytes(args.out, ueds_bytes(ds))
    return {"images": len(ds)}


_COMMANDS = {
    "attack": _cmd_attack,
    "defend": _cmd_defend,
    "detect": _cmd_detect,
    "gmm": _cmd_gmm,
    "probe": _cmd_probe,
    "convert": _cmd_convert,
}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse(argv)
        command = " ".join(x for x in (args.command, getattr(args, "defense", None), getattr(args, "action", None)) if x)
        result = _COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if not exc.code else 1
    except (FormatError, OSError, ValueError) as exc:
        print(f"convue: error: {exc}", file=sys.stderr)
        return 2
    summary = {"command": command, "config": resolved_config(args), "result": result}
    print(json.dumps(_jsonable(summary), sort_keys=True))
    return 0


def main() -> None:
    sys.exit(run())
