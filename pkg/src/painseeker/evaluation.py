"""Leave-one-rat-out protocol and pooled F1 / accuracy."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .baselines import FeatureCache, LBPConfig, Standardizer, lbp_feature, svm_predict, train_svm
from .dataset import DatasetManifest, ManifestEntry, PreprocessConfig, compute_fold_stats, standardize, to_batch
from .errors import EmptyEvaluation, InputError, LengthMismatch, TooFewRats
from .losses import HyperParams
from .model import BackboneConfig, PainSeeker, predict_labels
from .training import TrainConfig, TrainHistory, load_inputs, train_model

log = logging.getLogger(__name__)

METHODS = ("painseeker", "painseeker_no_prsc", "resnet_flatten", "lbp_svm")
DISPLAY = {
    "painseeker": "PainSeeker",
    "painseeker_no_prsc": "PainSeeker w/o PRSC",
    "resnet_flatten": "ResNet",
}


def normalize_method(method: str) -> str:
    m = method.strip().lower().replace("-", "_")
    if m not in METHODS:
        raise InputError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    return m


@dataclass(frozen=True)
class FoldSpec:
    test_rat: str
    train_rats: tuple[str, ...]


def loro_splits(manifest: DatasetManifest) -> list[FoldSpec]:
    """One fold per rat with labeled images, ordered by rat id."""
    labeled_rats = sorted({e.rat_id for e in manifest.labeled})
    for rat in manifest.rat_ids:
        if rat not in labeled_rats:
            log.warning("rat %s has no labeled images; fold skipped", rat)
    if len(labeled_rats) < 2:
        raise TooFewRats(f"leave-one-rat-out needs at least 2 rats with labeled images, got {len(labeled_rats)}")
    return [FoldSpec(r, tuple(o for o in labeled_rats if o != r)) for r in labeled_rats]


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion(predictions: Sequence[int], labels: Sequence[int]) -> ConfusionCounts:
    """Counts with pain (1) as the positive class."""
    p = np.asarray(predictions).astype(int).ravel()
    t = np.asarray(labels).astype(int).ravel()
    if p.shape != t.shape:
        raise LengthMismatch(f"{p.size} predictions vs {t.size} labels")
    return ConfusionCounts(
        tp=int(np.sum((p == 1) & (t == 1))),
        fp=int(np.sum((p == 1) & (t == 0))),
        fn=int(np.sum((p == 0) & (t == 1))),
        tn=int(np.sum((p == 0) & (t == 0))),
    )


def f1(counts: ConfusionCounts) -> float:
    if counts.total == 0:
        raise EmptyEvaluation("no evaluated images")
    denom = 2 * counts.tp + counts.fp + counts.fn
    if denom == 0:
        log.warning("F1 undefined (no positives predicted or present); reported as 0")
        return 0.0
    return 2 * counts.tp / denom


def accuracy(counts: ConfusionCounts) -> float:
    if counts.total == 0:
        raise EmptyEvaluation("no evaluated images")
    return (counts.tp + counts.tn) / counts.total * 100


def f1_undefined(counts: ConfusionCounts) -> bool:
    return 2 * counts.tp + counts.fp + counts.fn == 0


def format_cell(f1_value: float, acc_value: float) -> str:
    return f"{f1_value:.4f} / {acc_value:.2f}"


@dataclass
class MetricsReport:
    method: str  # display name
    per_rat: dict[str, ConfusionCounts]

    @property
    def pooled(self) -> ConfusionCounts:
        total = ConfusionCounts()
        for c in self.per_rat.values():
            total = total + c
        return total

    def rows(self) -> list[tuple[str, ConfusionCounts]]:
        return [(r, self.per_rat[r]) for r in sorted(self.per_rat)] + [("LORO", self.pooled)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "fold", "tp", "fp", "fn", "tn", "f1", "accuracy", "f1_undefined"])
        for fold, c in self.rows():
            w.writerow([self.method, fold, c.tp, c.fp, c.fn, c.tn, f"{f1(c):.6f}", f"{accuracy(c):.4f}", int(f1_undefined(c))])
        return buf.getvalue()

    def to_table(self) -> str:
        return format_table([self])


def format_table(reports: Sequence[MetricsReport]) -> str:
    """Aligned text table: per-rat columns plus the pooled LORO column, "F1 / Acc" cells."""
    rats = sorted({r for rep in reports for r in rep.per_rat})
    header = ["Method"] + rats + ["LORO"]
    body = []
    for rep in reports:
        cells = [rep.method]
        for r in rats:
            c = rep.per_rat.get(r)
            cells.append(format_cell(f1(c), accuracy(c)) if c is not None else "-")
        p = rep.pooled
        cells.append(format_cell(f1(p), accuracy(p)))
        body.append(cells)
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    fmt = lambda row: " | ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
    sep = "-+-".join("-" * w for w in widths)
    return "\n".join([fmt(header), sep] + [fmt(r) for r in body]) + "\n"


def read_report_csv(path) -> MetricsReport:
    per_rat = {}
    method = ""
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            method = row["method"]
            if row["fold"] != "LORO":
                per_rat[row["fold"]] = ConfusionCounts(int(row["tp"]), int(row["fp"]), int(row["fn"]), int(row["tn"]))
    return MetricsReport(method, per_rat)


# --------------------------------------------------------------------------
# LORO runs


@dataclass
class ImagePrediction:
    image_id: str
    rat_id: str
    label: int
    pred: int
    beta: Optional[np.ndarray] = None

    @property
    def beta_max_region(self) -> Optional[int]:
        return None if self.beta is None else int(np.argmax(self.beta))


@dataclass
class LoroResult:
    report: MetricsReport
    predictions: list[ImagePrediction]
    histories: dict[str, TrainHistory] = field(default_factory=dict)
    models: dict[str, PainSeeker] = field(default_factory=dict)
    region_grid: Optional[int] = None


def display_name(method: str, lbp: Optional[LBPConfig] = None) -> str:
    if method == "lbp_svm":
        return (lbp or LBPConfig()).name
    return DISPLAY[method]


def resolve_method(method: str, cfg: TrainConfig) -> tuple[str, TrainConfig]:
    """Canonical method name and the effective training config.

    PainSeeker with lambda = 0 is the no-PRSC ablation, and vice versa the
    ablation forces lambda = 0, so both spellings run the same computation.
    """
    method = normalize_method(method)
    if method == "painseeker_no_prsc" or (method == "painseeker" and cfg.hyper.lam == 0):
        return "painseeker_no_prsc", replace(cfg, hyper=replace(cfg.hyper, lam=0.0))
    if method == "resnet_flatten":
        return method, replace(cfg, hyper=replace(cfg.hyper, lam=0.0))
    return method, cfg


def run_loro(
    manifest: DatasetManifest,
    method: str,
    cfg: TrainConfig = TrainConfig(),
    backbone: BackboneConfig = BackboneConfig(),
    lbp: Optional[LBPConfig] = None,
    cache_dir=None,
    keep_models: bool = False,
) -> LoroResult:
    """Train per fold on the other rats, test on the held-out rat, pool the counts."""
    method, cfg = resolve_method(method, cfg)
    folds = loro_splits(manifest)
    entries = manifest.labeled
    if method == "lbp_svm":
        return _run_lbp(manifest, entries, folds, lbp or LBPConfig(), cache_dir)
    return _run_deep(manifest, entries, folds, method, cfg, backbone, keep_models)


def _run_deep(manifest, entries: list[ManifestEntry], folds, method, cfg, backbone, keep_models) -> LoroResult:
    if method != "resnet_flatten":
        cfg.hyper.check(backbone.region_count)
    pooling = "mean" if method == "resnet_flatten" else "attention"
    resized = load_inputs(manifest, entries, backbone.input_size)
    labels = np.array([e.binary_label for e in entries])
    rat_of = np.array([e.rat_id for e in entries])
    per_rat, preds, histories, models = {}, [], {}, {}
    for fold in folds:
        train_idx = np.flatnonzero(rat_of != fold.test_rat)
        test_idx = np.flatnonzero(rat_of == fold.test_rat)
        stats = compute_fold_stats(resized[i] for i in train_idx)
        x_train = to_batch([standardize(resized[i], stats) for i in train_idx])
        x_test = to_batch([standardize(resized[i], stats) for i in test_idx])
        log.info("fold %s: %d train / %d test images", fold.test_rat, len(train_idx), len(test_idx))
        model, history = train_model(x_train, torch.from_numpy(labels[train_idx]), cfg, backbone, pooling)
        with torch.no_grad():
            out = model(x_test)
        p = predict_labels(out.probs).numpy()
        beta = out.beta.numpy()
        per_rat[fold.test_rat] = confusion(p, labels[test_idx])
        histories[fold.test_rat] = history
        if keep_models:
            models[fold.test_rat] = model
        for k, i in enumerate(test_idx):
            e = entries[i]
            preds.append(ImagePrediction(e.image_id, e.rat_id, int(labels[i]), int(p[k]),
                                         beta[k] if pooling == "attention" else None))
    report = MetricsReport(display_name(method), per_rat)
    return LoroResult(report, preds, histories, models, backbone.region_grid)


def _run_lbp(manifest, entries, folds, lbp: LBPConfig, cache_dir) -> LoroResult:
    by_id = {e.image_id: e for e in entries}
    compute = lambda image_id: lbp_feature(manifest.load_sample(by_id[image_id]), lbp)
    ids = [e.image_id for e in entries]
    if cache_dir is not None:
        X = FeatureCache(cache_dir).get(lbp, ids, compute)
    else:
        X = np.stack([compute(i) for i in ids])
    labels = np.array([e.binary_label for e in entries])
    rat_of = np.array([e.rat_id for e in entries])
    per_rat, preds = {}, []
    for fold in folds:
        train_idx = np.flatnonzero(rat_of != fold.test_rat)
        test_idx = np.flatnonzero(rat_of == fold.test_rat)
        scaler = Standardizer(X[train_idx])
        svm = train_svm(scaler(X[train_idx]), np.where(labels[train_idx] == 1, 1, -1), C=1.0)
        p = (svm_predict(svm, scaler(X[test_idx])) > 0).astype(int)
        per_rat[fold.test_rat] = confusion(p, labels[test_idx])
        for k, i in enumerate(test_idx):
            preds.append(ImagePrediction(ids[i], rat_of[i], int(labels[i]), int(p[k])))
    return LoroResult(MetricsReport(display_name("lbp_svm", lbp), per_rat), preds)


def top_region_hits(beta: np.ndarray, regions: Sequence[int], k: int) -> np.ndarray:
    """Per image, how many of ``regions`` are among the ``k`` largest attention weights."""
    beta = np.atleast_2d(beta)
    order = np.argsort(-beta, axis=1, kind="stable")[:, :k]
    return np.isin(order, list(regions)).sum(1)


# --------------------------------------------------------------------------
# output files


def _safe_name(image_id: str) -> str:
    return image_id.replace("/", "_").replace("\\", "_")


def write_pgm(grid: np.ndarray, path) -> None:
    """Binary 8-bit PGM, values scaled so the grid maximum maps to 255."""
    g = np.asarray(grid, dtype=np.float64)
    top = g.max()
    img = np.round(g / top * 255).astype(np.uint8) if top > 0 else np.zeros(g.shape, np.uint8)
    with Path(path).open("wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


def write_loro_outputs(result: LoroResult, run_dir, attention_maps: bool = True) -> dict[str, Path]:
    """Write report.csv, report.txt, predictions.csv and, for attention models, attention outputs."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    paths = {"report_csv": run_dir / "report.csv", "report_txt": run_dir / "report.txt",
             "predictions": run_dir / "predictions.csv"}
    paths["report_csv"].write_text(result.report.to_csv())
    paths["report_txt"].write_text(result.report.to_table())
    with paths["predictions"].open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "rat_id", "label", "pred", "beta_max_region"])
        for p in result.predictions:
            w.writerow([p.image_id, p.rat_id, p.label, p.pred, "" if p.beta is None else p.beta_max_region])
    for rat, history in result.histories.items():
        history.write_csv(run_dir / f"train_log_{rat}.csv")
    if attention_maps and any(p.beta is not None for p in result.predictions):
        paths["attention"] = run_dir / "attention.csv"
        heat_dir = run_dir / "attention"
        heat_dir.mkdir(exist_ok=True)
        m = result.region_grid
        with paths["attention"].open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["image_id", "region_index", "beta"])
            for p in result.predictions:
                for j, b in enumerate(p.beta):
                    w.writerow([p.image_id, j, f"{b:.8f}"])
                write_pgm(p.beta.reshape(m, m), heat_dir / f"{_safe_name(p.image_id)}.pgm")
    return paths
