"""Mini-batch Adam training of PainSeeker."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .dataset import DatasetManifest, FoldStats, PreprocessConfig, compute_fold_stats, preprocess, resize_image, to_batch
from .errors import InputError, NonFiniteLoss, ShapeMismatch, SingleClassTrainSet
from .losses import HyperParams, total_loss
from .model import BackboneConfig, PainSeeker, build_model, import_backbone_weights

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 30
    seed: int = 0
    hyper: HyperParams = field(default_factory=HyperParams)

    def __post_init__(self):
        if self.batch_size < 1:
            raise InputError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise InputError("learning_rate must be > 0")
        if self.epochs < 0:
            raise InputError("epochs must be >= 0")


@dataclass
class AdamState:
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params: Sequence[torch.Tensor], grads: Sequence[torch.Tensor], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads):
        raise ShapeMismatch(f"{len(params)} parameters but {len(grads)} gradients")
    if not state.m:
        state.m = [torch.zeros_like(p) for p in params]
        state.v = [torch.zeros_like(p) for p in params]
    state.t += 1
    c1 = 1 - beta1**state.t
    c2 = 1 - beta2**state.t
    with torch.no_grad():
        for p, g, m, v in zip(params, grads, state.m, state.v):
            if g is None:
                continue
            if g.shape != p.shape:
                raise ShapeMismatch(f"gradient shape {tuple(g.shape)} vs parameter {tuple(p.shape)}")
            m.mul_(beta1).add_(g, alpha=1 - beta1)
            v.mul_(beta2).addcmul_(g, g, value=1 - beta2)
            p.sub_(lr * (m / c1) / (torch.sqrt(v / c2) + eps))
    return state


@dataclass
class TrainHistory:
    mean_total: list[float] = field(default_factory=list)
    mean_ce: list[float] = field(default_factory=list)
    mean_prsc: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.mean_total)

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "mean_total", "mean_ce", "mean_prsc", "seconds"])
            for i in range(len(self)):
                w.writerow([i + 1, f"{self.mean_total[i]:.8f}", f"{self.mean_ce[i]:.8f}",
                            f"{self.mean_prsc[i]:.8f}", f"{self.seconds[i]:.3f}"])


def train_model(
    x: torch.Tensor,
    labels: torch.Tensor,
    cfg: TrainConfig,
    backbone: BackboneConfig,
    pooling: str = "attention",
    model: Optional[PainSeeker] = None,
) -> tuple[PainSeeker, TrainHistory]:
    """Train on preprocessed inputs ``x`` (N x 3 x d x d) with binary ``labels``."""
    labels = torch.as_tensor(labels, dtype=torch.long)
    if len(x) == 0:
        raise SingleClassTrainSet("empty training set")
    if len(torch.unique(labels)) < 2:
        raise SingleClassTrainSet("training set contains a single class")
    model = model or build_model(backbone, seed=cfg.seed, pooling=pooling, dtype=x.dtype)
    params = [p for p in model.parameters()]
    state = AdamState()
    rng = np.random.default_rng(cfg.seed)
    history = TrainHistory()
    n = len(x)
    model.train()
    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        order = torch.from_numpy(rng.permutation(n))
        sums = np.zeros(3)
        for step, lo in enumerate(range(0, n, cfg.batch_size), start=1):
            idx = order[lo : lo + cfg.batch_size]
            out = model(x[idx])
            losses = total_loss(out.logits, out.beta, labels[idx], cfg.hyper)
            if not torch.isfinite(losses.total):
                raise NonFiniteLoss(epoch, step, f"ce={float(losses.ce.detach())}, prsc={float(losses.prsc.detach())}")
            grads = torch.autograd.grad(losses.total, params, allow_unused=True)
            adam_step(params, grads, state, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
            k = len(idx)
            sums += k * np.array([float(losses.total.detach()), float(losses.ce.detach()), float(losses.prsc.detach())])
        means = sums / n
        history.mean_total.append(means[0])
        history.mean_ce.append(means[1])
        history.mean_prsc.append(means[2])
        history.seconds.append(time.perf_counter() - start)
        log.debug("epoch %d total=%.4f ce=%.4f prsc=%.4f", epoch, *means)
    model.eval()
    return model, history


@dataclass
class TrainResult:
    model: PainSeeker
    history: TrainHistory
    stats: FoldStats


def load_inputs(manifest: DatasetManifest, entries, size: int) -> list[np.ndarray]:
    """Decode and resize entries (not standardized)."""
    return [resize_image(manifest.load_sample(e).pixels, size) for e in entries]


def train(
    manifest: DatasetManifest,
    train_rats,
    cfg: TrainConfig,
    backbone: BackboneConfig,
    pooling: str = "attention",
    weights=None,
) -> TrainResult:
    """Train on the labeled images of ``train_rats``.

    Starts from scratch unless ``weights`` names a torchvision-style ResNet
    state dict to initialize the backbone with.
    """
    train_rats = set(train_rats)
    entries = [e for e in manifest.labeled if e.rat_id in train_rats]
    if not entries:
        raise SingleClassTrainSet("no labeled training images for the requested rats")
    resized = load_inputs(manifest, entries, backbone.input_size)
    stats = compute_fold_stats(resized)
    pcfg = PreprocessConfig(backbone.input_size, backbone.downsample)
    x = to_batch([preprocess(r, pcfg, stats) for r in resized])
    y = torch.tensor([e.binary_label for e in entries])
    model = None
    if weights is not None:
        model = build_model(backbone, seed=cfg.seed, pooling=pooling, dtype=x.dtype)
        import_backbone_weights(model, weights)
    model, history = train_model(x, y, cfg, backbone, pooling, model)
    return TrainResult(model, history, stats)
