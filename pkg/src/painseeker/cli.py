"""Command-line entry point: ``painseeker {aggregate,synth,train,loro,report}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import annotation, dataset, evaluation, plotting
from .baselines import LBPConfig
from .config import read_config, write_config
from .errors import InputError, PainSeekerError
from .losses import HyperParams
from .model import BackboneConfig, save_checkpoint
from .training import TrainConfig, train

log = logging.getLogger("painseeker")

# flag name -> argparse dest where they differ
DEST = {"lambda": "lam", "kh": "k_h"}


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value file; command-line flags take precedence")
    p.add_argument("--seed", type=int, default=None, help="random seed (falls back to $PAINSEEKER_SEED, then 0)")
    p.add_argument("--jobs", type=int, default=1, help="intra-op threads; 1 is bit-reproducible")
    p.add_argument("--out-root", default="runs", help="parent of the timestamped run directory")
    p.add_argument("--run-dir", default=None, help="explicit run directory (overrides --out-root naming)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")


def _add_training(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model and training")
    g.add_argument("--backbone", choices=("desk", "resnet18"), default="desk", help="feature extractor")
    g.add_argument("--input-size", type=int, default=None, help="input side length (desk: 64, resnet18: 224)")
    g.add_argument("--widths", type=_ints, default=None, help="desk stage widths (default 8,16,32,64)")
    g.add_argument("--weights", default=None, help="torchvision-style ResNet-18 state dict to initialize the backbone")
    g.add_argument("--lambda", dest="lam", type=float, default=0.1, help="PRSC trade-off")
    g.add_argument("--delta", type=float, default=0.05, help="PRSC margin")
    g.add_argument("--kh", dest="k_h", type=int, default=5, help="number of highly pain-related regions")
    g.add_argument("--epochs", type=int, default=30, help="training epochs per fold")
    g.add_argument("--lr", type=float, default=1e-4, help="Adam learning rate")
    g.add_argument("--batch-size", type=int, default=64, help="mini-batch size")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="painseeker", description=__doc__, formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("aggregate", help="two-stage annotation consensus -> labels + statistics", formatter_class=fmt)
    p.add_argument("annotations", help="CSV image_id,component,annotator_id,stage,score")
    _add_common(p)

    p = sub.add_parser("synth", help="generate the synthetic dataset", formatter_class=fmt)
    p.add_argument("--out", required=True, help="dataset directory")
    p.add_argument("--rats", type=int, default=6, help="number of synthetic rats")
    p.add_argument("--images-per-rat", type=int, default=100, help="images per rat, half of them pain")
    p.add_argument("--grid", type=int, default=4, help="region grid side")
    p.add_argument("--informative", type=_ints, default=[0, 1, 2, 3, 4], help="informative region indices")
    p.add_argument("--image-size", type=int, default=64, help="image side length")
    _add_common(p)

    p = sub.add_parser("train", help="train one model on a set of rats", formatter_class=fmt)
    p.add_argument("--manifest", required=True, help="image_path,rat_id,raw_score CSV")
    p.add_argument("--train-rats", default=None, help="comma-separated rat ids (default: all)")
    p.add_argument("--method", default="painseeker", choices=("painseeker", "painseeker-no-prsc", "resnet-flatten"),
                   help="model to train")
    _add_training(p)
    _add_common(p)

    p = sub.add_parser("loro", help="leave-one-rat-out evaluation", formatter_class=fmt)
    p.add_argument("--manifest", required=True, help="image_path,rat_id,raw_score CSV")
    p.add_argument("--method", default="painseeker",
                   choices=("painseeker", "painseeker-no-prsc", "resnet-flatten", "lbp-svm"), help="method to evaluate")
    _add_training(p)
    g = p.add_argument_group("LBP baseline")
    g.add_argument("--radius", type=int, default=1, choices=(1, 3), help="LBP sampling radius")
    g.add_argument("--grid", type=int, default=4, choices=(4, 8, 16), help="LBP spatial division")
    g.add_argument("--lbp-size", type=int, default=224, help="resize side before LBP coding")
    g.add_argument("--cache-dir", default=None, help="LBP feature cache directory")
    p.add_argument("--no-figures", action="store_true", help="skip the PNG figures")
    p.add_argument("--no-attention-maps", action="store_true", help="skip attention.csv and per-image maps")
    p.add_argument("--save-checkpoints", action="store_true", help="write one checkpoint per fold")
    _add_common(p)

    p = sub.add_parser("report", help="combine LORO run directories into one table and figures", formatter_class=fmt)
    p.add_argument("runs", nargs="+", help="run directories containing report.csv")
    _add_common(p)
    return parser


def _known_dests(parser: argparse.ArgumentParser) -> dict[str, str]:
    return {a.option_strings[-1].lstrip("-") if a.option_strings else a.dest: a.dest
            for a in parser._actions if a.dest != "help"}


def parse_args(argv=None) -> argparse.Namespace:
    """Defaults < config file < command line; seed falls back to $PAINSEEKER_SEED."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        flags = _known_dests(sub)
        values = read_config(args.config)
        unknown = sorted(set(values) - set(flags))
        if unknown:
            parser.error(f"unknown config keys for {args.command}: {', '.join(unknown)}")
        flag_actions = {a.dest: a for a in sub._actions}
        defaults = {}
        for k, v in values.items():
            dest = flags[k]
            if isinstance(flag_actions[dest], argparse._StoreTrueAction):
                v = v.strip().lower() in ("1", "true", "yes", "on")
            defaults[dest] = v
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    if args.seed is None:
        env = os.environ.get("PAINSEEKER_SEED")
        try:
            args.seed = int(env) if env not in (None, "") else 0
        except ValueError:
            parser.error(f"PAINSEEKER_SEED must be an integer, got {env!r}")
    return args


def _run_dir(args) -> Path:
    if args.run_dir:
        path = Path(args.run_dir)
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        path = Path(args.out_root) / f"{stamp}_{args.command}_seed{args.seed}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _resolved(args) -> dict:
    skip = {"config", "verbose"}
    out = {}
    for k, v in vars(args).items():
        if k in skip:
            continue
        key = {v2: k2 for k2, v2 in DEST.items()}.get(k, k).replace("_", "-")
        out[key] = ",".join(map(str, v)) if isinstance(v, (list, tuple)) else v
    return out


def _backbone(args) -> BackboneConfig:
    if args.backbone == "resnet18":
        return BackboneConfig.resnet18(args.input_size or 224)
    return BackboneConfig.desk(args.input_size or 64, tuple(args.widths or (8, 16, 32, 64)))


def _train_config(args) -> TrainConfig:
    hyper = HyperParams(lam=args.lam, delta=args.delta, k_h=args.k_h)
    return TrainConfig(batch_size=args.batch_size, learning_rate=args.lr, epochs=args.epochs, seed=args.seed, hyper=hyper)


# --------------------------------------------------------------------------
# subcommands


def cmd_aggregate(args) -> int:
    records = annotation.read_annotations(args.annotations)
    results = annotation.aggregate_annotations(records)
    stats = annotation.dataset_statistics(results)
    run = _run_dir(args)
    annotation.write_labels(results, run / "labels.csv")
    (run / "statistics.csv").write_text(stats.to_csv())
    write_config(_resolved(args), run / "config_resolved.txt")
    print(stats.pretty())
    print(f"\nwrote {run / 'labels.csv'} and {run / 'statistics.csv'}")
    return 0


def cmd_synth(args) -> int:
    cfg = dataset.SyntheticConfig(
        n_rats=args.rats, images_per_rat=args.images_per_rat, grid=args.grid,
        informative_regions=tuple(args.informative), image_size=args.image_size, seed=args.seed,
    )
    manifest = dataset.generate_synthetic_dataset(args.out, cfg)
    write_config(_resolved(args), Path(args.out) / "config_resolved.txt")
    print(f"wrote {len(manifest)} images for {cfg.n_rats} rats to {args.out}")
    return 0


def cmd_train(args) -> int:
    manifest = dataset.load_manifest(args.manifest)
    rats = args.train_rats.split(",") if args.train_rats else manifest.rat_ids
    method, cfg = evaluation.resolve_method(args.method, _train_config(args))
    backbone = _backbone(args)
    pooling = "mean" if method == "resnet_flatten" else "attention"
    run = _run_dir(args)
    res = train(manifest, rats, cfg, backbone, pooling, weights=args.weights)
    model, history, stats = res.model, res.history, res.stats
    save_checkpoint(model, run / "checkpoint.npz",
                    extra={"mean": stats.mean.tolist(), "std": stats.std.tolist(), "train_rats": list(rats)})
    history.write_csv(run / "train_log.csv")
    write_config(_resolved(args), run / "config_resolved.txt")
    plotting.plot_training_curves({"train": history}, run / "training_curves.png")
    print(f"final mean CE {history.mean_ce[-1]:.4f}; outputs in {run}" if len(history) else f"outputs in {run}")
    return 0


def write_figures(result: evaluation.LoroResult, run: Path, informative=None) -> None:
    plotting.plot_fold_metrics([result.report], run / "metrics.png")
    if result.histories:
        plotting.plot_training_curves(result.histories, run / "training_curves.png")
    betas = [p.beta for p in result.predictions if p.beta is not None]
    if betas:
        m = result.region_grid
        mean = np.mean(betas, axis=0).reshape(m, m)
        plotting.plot_attention_map(mean, run / "attention_mean.png", "mean attention (all test images)", informative)
        pain = [p.beta for p in result.predictions if p.beta is not None and p.label == 1]
        if pain:
            plotting.plot_attention_map(np.mean(pain, axis=0).reshape(m, m), run / "attention_mean_pain.png",
                               "mean attention (pain images)", informative)


def _ground_truth(manifest_path) -> dict | None:
    p = Path(manifest_path).parent / "ground_truth.json"
    return json.loads(p.read_text()) if p.exists() else None


def cmd_loro(args) -> int:
    manifest = dataset.load_manifest(args.manifest)
    backbone = _backbone(args)
    lbp = LBPConfig(radius=args.radius, grid=args.grid, image_size=args.lbp_size)
    if args.weights:
        raise InputError("--weights is only supported by the train subcommand")
    result = evaluation.run_loro(manifest, args.method, _train_config(args), backbone, lbp, args.cache_dir,
                                 keep_models=args.save_checkpoints)
    run = _run_dir(args)
    evaluation.write_loro_outputs(result, run, attention_maps=not args.no_attention_maps)
    for rat, model in result.models.items():
        save_checkpoint(model, run / f"checkpoint_{rat}.npz")
    truth = _ground_truth(args.manifest)
    informative = truth["informative_regions"] if truth and truth["grid"] == backbone.region_grid else None
    if informative is not None:
        betas = np.array([p.beta for p in result.predictions if p.beta is not None])
        if len(betas):
            hits = evaluation.top_region_hits(betas, informative, min(args.k_h, len(informative)))
            (run / "attention_hits.txt").write_text(f"mean informative regions in top-{args.k_h}: {hits.mean():.4f}\n")
    if not args.no_figures:
        write_figures(result, run, informative)
    write_config(_resolved(args), run / "config_resolved.txt")
    print(result.report.to_table(), end="")
    print(f"outputs in {run}")
    return 0


def cmd_report(args) -> int:
    reports = []
    for d in args.runs:
        path = Path(d) / "report.csv"
        if not path.is_file():
            raise InputError(f"{d} has no report.csv")
        reports.append(evaluation.read_report_csv(path))
    run = _run_dir(args)
    table = evaluation.format_table(reports)
    (run / "comparison.txt").write_text(table)
    (run / "comparison.csv").write_text("".join(
        r.to_csv() if i == 0 else r.to_csv().split("\n", 1)[1] for i, r in enumerate(reports)))
    plotting.plot_fold_metrics(reports, run / "comparison.png")
    write_config(_resolved(args), run / "config_resolved.txt")
    print(table, end="")
    print(f"outputs in {run}")
    return 0


COMMANDS = {"aggregate": cmd_aggregate, "synth": cmd_synth, "train": cmd_train, "loro": cmd_loro, "report": cmd_report}


def main(argv=None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(max(1, args.jobs))
    try:
        return COMMANDS[args.command](args)
    except PainSeekerError as exc:
        print(f"painseeker {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
