"""Command-line entry point: ``bonegraph <command> [options]``.

Exit status is 0 on success, 2 for invalid input or configuration and 3 for
any other failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .delineate import BASELINES, BaselineConfig, render_overlay
from .features import save_stack
from .imagecore import ensure_dir, load_image, save_delineation, save_labelmap
from .metrics import evaluate, write_report_csv
from .phantom import PhantomRanges, generate_dataset
from .pipeline import (
    GridSpec,
    ModelPair,
    REPORT_COLUMNS,
    RunConfig,
    Sample,
    crossval_gridsearch,
    delineate_image,
    extract_features,
    load_config,
    load_dataset,
    preset,
    run_feature_selection,
    train_from_samples,
    working_image,
    write_feature_selection,
    write_rows_csv,
)

log = logging.getLogger("bonegraph")

EXIT_OK, EXIT_INVALID, EXIT_FAILURE = 0, 2, 3


def _common(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--config", default=d(None), help="flat key=value config file")
    parser.add_argument("--preset", default=d(None), help="named parameter preset, e.g. cbg-paper")
    parser.add_argument("--set", dest="overrides", action="append", default=d([]), metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    parser.add_argument("--seed", type=int, default=d(None), help="random seed")
    parser.add_argument("--jobs", type=int, default=d(1), help="worker processes")
    parser.add_argument("--out", default=d("out"), help="output directory")
    parser.add_argument("-v", "--verbose", action="store_true", default=d(False))


def _data_args(p, required=True):
    p.add_argument("--data", required=required, help="dataset directory with manifest.csv")
    p.add_argument("--range", dest="subset", default="", help="manifest slice a:b")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bonegraph", description="Bone surface delineation in ultrasound images.")
    parser.add_argument("--version", action="version", version=__version__)
    _common(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, **kw):
        p = sub.add_parser(name, **kw)
        _common(p, suppress=True)
        return p

    ph = add("phantom", help="synthetic phantoms")
    ph_sub = ph.add_subparsers(dest="action", required=True)
    gen = ph_sub.add_parser("gen", help="write a phantom dataset")
    _common(gen, suppress=True)
    gen.add_argument("--n", type=int, default=50)
    gen.add_argument("--adversarial-prob", type=float, default=PhantomRanges.adversarial_prob)
    gen.add_argument("--size", type=int, default=128, help="phantom height and width in pixels")

    fe = add("features", help="feature extraction")
    fe_sub = fe.add_subparsers(dest="action", required=True)
    ex = fe_sub.add_parser("extract", help="write per-image feature stacks")
    _common(ex, suppress=True)
    ex.add_argument("--image", nargs="*", default=[], help="images (instead of --data)")
    _data_args(ex, required=False)

    tr = add("train", help="train the shadow and tissue classifiers")
    _data_args(tr)

    de = add("delineate", help="delineate bone surfaces with trained models")
    de.add_argument("--model", required=True, help="directory with shadow.json and tissue.json")
    de.add_argument("--image", nargs="*", default=[])
    de.add_argument("--no-overlay", action="store_true")
    _data_args(de, required=False)

    ev = add("evaluate", help="score predicted delineations against the gold standard")
    ev.add_argument("--pred", required=True, help="directory with <image>_pred.csv files")
    _data_args(ev)

    gs = add("gridsearch", help="cross-validated parameter search")
    _data_args(gs)
    gs.add_argument("--grid", nargs="*", default=[], metavar="NAME=V1,V2",
                    help="grid values, names: lambda_ps angle_ps n_r sigma0 mu k1 k2 k3")
    gs.add_argument("--folds", type=int, default=6)
    gs.add_argument("--subsets", type=int, default=5)

    fs = add("featselect", help="greedy backward feature-group elimination")
    _data_args(fs)
    fs.add_argument("--holdout", type=float, default=0.3)

    bl = add("baseline", help="phase-symmetry baselines")
    bl.add_argument("method", choices=sorted(BASELINES))
    bl.add_argument("--image", nargs="*", default=[])
    _data_args(bl, required=False)
    return parser


# --------------------------------------------------------------------------


def resolve_config(args) -> RunConfig:
    cfg = preset(args.preset) if args.preset else RunConfig()
    if args.config:
        cfg = load_config(args.config, cfg)
    pairs = {}
    for item in args.overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"--set expects key=value, got {item!r}")
        pairs[key.strip()] = value.strip()
    if args.seed is not None:
        pairs["seed"] = args.seed
        pairs["boost.rng_seed"] = args.seed
    if getattr(args, "data", None):
        pairs["data.root"] = args.data
    return cfg.with_overrides(pairs)


def _versions() -> dict:
    import numba
    import scipy
    import skimage

    return {
        "bonegraph": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
        "scikit-image": skimage.__version__,
    }


def write_provenance(out: Path, cfg: RunConfig, argv) -> None:
    record = {
        "command": list(argv),
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "versions": _versions(),
    }
    (out / "provenance.json").write_text(json.dumps(record, indent=1, sort_keys=True) + "\n")
    (out / "config.txt").write_text(cfg.to_text())


def _samples(args, cfg) -> list[Sample]:
    images = getattr(args, "image", None) or []
    if images:
        return [Sample(Path(p).stem, load_image(p)) for p in images]
    if not getattr(args, "data", None):
        raise ValueError("give --data or --image")
    samples = load_dataset(args.data, args.subset)
    if not samples:
        raise ValueError(f"no images selected from {args.data}")
    return samples


# --------------------------------------------------------------------------
# commands


def cmd_phantom(args, cfg, out):
    if args.size < 32:
        raise ValueError("--size must be >= 32")
    ranges = PhantomRanges(height=args.size, width=args.size, adversarial_prob=args.adversarial_prob,
                           d0=(0.35 * args.size, 0.62 * args.size), amplitude=(0.0, 0.09 * args.size))
    entries = generate_dataset(args.n, out, ranges, seed=cfg.seed)
    log.info("wrote %d phantoms to %s", len(entries), out)


def cmd_features(args, cfg, out):
    rows = []
    for s in _samples(args, cfg):
        stack = extract_features(working_image(s.image, cfg), cfg)
        save_stack(stack, out / f"{s.name}.feat")
        for (g, t), m in zip(stack.names, stack.data):
            rows.append({"image": s.name, "group": g, "feature": t, "mean": float(m.mean()), "std": float(m.std())})
    write_rows_csv(out / "features.csv", rows, ["image", "group", "feature", "mean", "std"])


def cmd_train(args, cfg, out):
    samples = _samples(args, cfg)
    models = train_from_samples(samples, cfg)
    models.save(out)
    rows = []
    for name, m in (("shadow", models.shadow), ("tissue", models.tissue)):
        n = len(m.bag_masks[0]) if m.bag_masks else 0
        rows.append({"classifier": name, "rows": n, "trees": len(m.trees), "features": m.n_features,
                     "final_loss": float(m.loss_history[-1])})
    write_rows_csv(out / "training.csv", rows, ["classifier", "rows", "trees", "features", "final_loss"])


def _write_predictions(out, samples, predict, overlay=True):
    rows, names, reports = [], [], []
    for s in samples:
        d = predict(s)
        save_delineation(d, out / f"{s.name}_pred.csv")
        if overlay:
            render_overlay(s.image, d, s.gs, out / f"{s.name}_overlay.png")
        rows.append({"image": s.name, "detected_columns": len(d)})
        if s.gs is not None and len(s.gs):
            names.append(s.name)
            reports.append(evaluate(d, s.gs))
    write_rows_csv(out / "predictions.csv", rows, ["image", "detected_columns"])
    if reports:
        write_report_csv(out / "metrics.csv", names, reports)


def cmd_delineate(args, cfg, out):
    models = ModelPair.load(args.model)
    samples = _samples(args, cfg)

    def predict(s):
        d, lm, rep = delineate_image(s.image, models, cfg)
        save_labelmap(lm, out / f"{s.name}_labels.pgm")
        return d

    _write_predictions(out, samples, predict, overlay=not args.no_overlay)


def cmd_baseline(args, cfg, out):
    fn = BASELINES[args.method]
    bcfg = BaselineConfig(threshold=cfg.baseline.threshold, ps=cfg.ps, confidence=cfg.confidence)
    _write_predictions(out, _samples(args, cfg), lambda s: fn(s.image, bcfg))


def cmd_evaluate(args, cfg, out):
    from .imagecore import load_delineation

    samples = load_dataset(args.data, args.subset)
    names, reports = [], []
    for s in samples:
        p = Path(args.pred) / f"{s.name}_pred.csv"
        if not p.exists():
            raise ValueError(f"missing prediction {p}")
        names.append(s.name)
        reports.append(evaluate(load_delineation(p, s.image.spacing_mm, s.image.height), s.gs))
    write_report_csv(out / "metrics.csv", names, reports)


def cmd_gridsearch(args, cfg, out):
    samples = _samples(args, cfg)
    res = crossval_gridsearch(samples, GridSpec.parse(args.grid), cfg, folds=args.folds, subsets=args.subsets,
                              seed=cfg.seed, jobs=args.jobs)
    write_rows_csv(out / "gridsearch.csv", res.best, ["subset"] + REPORT_COLUMNS)
    write_rows_csv(out / "gridsearch_all.csv", res.table, ["subset"] + REPORT_COLUMNS)


def cmd_featselect(args, cfg, out):
    trace, timing = run_feature_selection(_samples(args, cfg), cfg, args.holdout)
    write_feature_selection(out, trace, timing)


COMMANDS = {
    "phantom": cmd_phantom,
    "features": cmd_features,
    "train": cmd_train,
    "delineate": cmd_delineate,
    "evaluate": cmd_evaluate,
    "gridsearch": cmd_gridsearch,
    "featselect": cmd_featselect,
    "baseline": cmd_baseline,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        out = ensure_dir(args.out)
        write_provenance(out, cfg, ["bonegraph"] + argv)
        COMMANDS[args.command](args, cfg, out)
    except (ValueError, FileNotFoundError) as e:
        print(f"bonegraph: error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as e:  # noqa: BLE001 - any other failure maps to one exit code
        print(f"bonegraph: failed: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
