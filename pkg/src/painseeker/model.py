"""PainSeeker network: convolutional backbone, region attention and classifier head."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np
import torch
import torch.nn as nn

from .errors import InputError, NonFiniteLogit, ShapeMismatch

CHECKPOINT_VERSION = 1
ATTENTION_EPS = 1e-12


@dataclass(frozen=True)
class BackboneConfig:
    """Backbone geometry.

    ``resnet18`` is the standard 4-stage residual layout (stride 32, so a 224
    input gives a 7 x 7 x 512 map). ``desk`` is a small 4-stage strided
    residual network (stride 16; 64 px input gives 4 x 4 regions).
    """

    variant: str = "desk"
    input_size: int = 64
    stage_widths: tuple[int, ...] = (8, 16, 32, 64)
    num_classes: int = 2
    batch_norm: bool = True

    def __post_init__(self):
        if self.variant not in ("desk", "resnet18"):
            raise InputError(f"unknown backbone variant {self.variant!r}")
        if len(self.stage_widths) != 4:
            raise InputError("stage_widths must list 4 stage widths")
        if self.input_size % self.downsample:
            raise InputError(f"input_size {self.input_size} not divisible by downsampling {self.downsample}")

    @classmethod
    def resnet18(cls, input_size: int = 224, **kw) -> "BackboneConfig":
        return cls("resnet18", input_size, (64, 128, 256, 512), **kw)

    @classmethod
    def desk(cls, input_size: int = 64, stage_widths=(8, 16, 32, 64), **kw) -> "BackboneConfig":
        return cls("desk", input_size, tuple(stage_widths), **kw)

    @property
    def downsample(self) -> int:
        return 32 if self.variant == "resnet18" else 16

    @property
    def region_grid(self) -> int:
        return self.input_size // self.downsample

    @property
    def region_count(self) -> int:
        return self.region_grid**2

    @property
    def feature_dim(self) -> int:
        return self.stage_widths[-1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage_widths"] = list(self.stage_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        d = dict(d)
        d["stage_widths"] = tuple(d["stage_widths"])
        return cls(**d)


def _norm(width: int, enabled: bool) -> nn.Module:
    return nn.BatchNorm2d(width) if enabled else nn.Identity()


class BasicBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int = 1, bn: bool = True, kernel: int = 3):
        super().__init__()
        pad = kernel // 2
        self.conv1 = nn.Conv2d(in_ch, out_ch, kernel, stride, pad, bias=not bn)
        self.bn1 = _norm(out_ch, bn)
        self.conv2 = nn.Conv2d(out_ch, out_ch, kernel, 1, pad, bias=not bn)
        self.bn2 = _norm(out_ch, bn)
        self.relu = nn.ReLU(inplace=False)
        self.downsample = None
        if stride != 1 or in_ch != out_ch:
            self.downsample = nn.Sequential(nn.Conv2d(in_ch, out_ch, 1, stride, bias=not bn), _norm(out_ch, bn))

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + identity)


def _down(in_ch: int, out_ch: int, bn: bool) -> nn.Sequential:
    return nn.Sequential(nn.Conv2d(in_ch, out_ch, 2, 2, bias=not bn), _norm(out_ch, bn), nn.ReLU(inplace=False))


class Backbone(nn.Module):
    """Convolutional feature extractor producing an N x d_x x M x M map.

    The ``resnet18`` variant uses torchvision's module names (conv1, bn1,
    layer1..layer4) so a ResNet-18 state dict can be imported directly.

    The ``desk`` variant keeps each output region local: a 2 x 2 stride-2
    stem, then stages of one residual block followed by a 2 x 2 stride-2
    convolution (the last stage has no downsampling). Only the two finest
    stages use 3 x 3 kernels, 1 x 1 afterwards, so a region's receptive field
    is 40 px for a 16 px cell rather than the whole image.
    """

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        w = cfg.stage_widths
        bn = cfg.batch_norm
        self.relu = nn.ReLU(inplace=False)
        if cfg.variant == "resnet18":
            self.conv1 = nn.Conv2d(3, w[0], 7, 2, 3, bias=not bn)
            self.bn1 = _norm(w[0], bn)
            self.maxpool = nn.MaxPool2d(3, 2, 1)
            in_ch = w[0]
            for i, (width, stride) in enumerate(zip(w, (1, 2, 2, 2)), start=1):
                layer = nn.Sequential(BasicBlock(in_ch, width, stride, bn), BasicBlock(width, width, 1, bn))
                setattr(self, f"layer{i}", layer)
                in_ch = width
        else:
            self.conv1 = nn.Conv2d(3, w[0], 2, 2, bias=not bn)
            self.bn1 = _norm(w[0], bn)
            self.maxpool = nn.Identity()
            in_ch = w[0]
            for i, (width, kernel) in enumerate(zip(w, (3, 3, 1, 1)), start=1):
                if i < 4:
                    layer = nn.Sequential(BasicBlock(in_ch, in_ch, 1, bn, kernel), _down(in_ch, width, bn))
                else:
                    layer = nn.Sequential(BasicBlock(in_ch, width, 1, bn, kernel))
                setattr(self, f"layer{i}", layer)
                in_ch = width

    def forward(self, x):
        x = self.maxpool(self.relu(self.bn1(self.conv1(x))))
        return self.layer4(self.layer3(self.layer2(self.layer1(x))))


class ForwardOutput(NamedTuple):
    logits: torch.Tensor  # N x c
    probs: torch.Tensor  # N x c, softmax of logits
    beta: torch.Tensor  # N x K attention weights
    features: torch.Tensor  # N x K x d_x region features


def region_features(feature_map: torch.Tensor) -> torch.Tensor:
    """Reshape an N x d_x x M x M map to N x K x d_x, regions in row-major order."""
    n, d, m1, m2 = feature_map.shape
    return feature_map.permute(0, 2, 3, 1).reshape(n, m1 * m2, d)


def normalize_scores(logits: torch.Tensor) -> torch.Tensor:
    """Sigmoid each region logit and normalize over regions (last axis)."""
    if not torch.all(torch.isfinite(logits)):
        raise NonFiniteLogit("attention logits contain NaN/Inf")
    s = torch.sigmoid(logits)
    return s / (s.sum(dim=-1, keepdim=True) + ATTENTION_EPS)


class PainSeeker(nn.Module):
    """Backbone f, region scorer g (d_x -> 1) and classifier h (d_x -> c).

    With ``pooling="mean"`` the scorer is bypassed and regions are averaged
    uniformly, which gives the plain ResNet baseline (global average pool +
    fully connected layer).
    """

    def __init__(self, cfg: BackboneConfig, pooling: str = "attention"):
        super().__init__()
        if pooling not in ("attention", "mean"):
            raise InputError(f"unknown pooling {pooling!r}")
        self.cfg = cfg
        self.pooling = pooling
        self.backbone = Backbone(cfg)
        self.scorer = nn.Linear(cfg.feature_dim, 1)
        self.classifier = nn.Linear(cfg.feature_dim, cfg.num_classes)

    def parameter_groups(self) -> dict[str, list[tuple[str, nn.Parameter]]]:
        """Named parameters split into theta_f, theta_g and theta_h."""
        groups = {"theta_f": [], "theta_g": [], "theta_h": []}
        for name, p in self.named_parameters():
            key = {"backbone": "theta_f", "scorer": "theta_g", "classifier": "theta_h"}[name.split(".")[0]]
            groups[key].append((name, p))
        return groups

    def extract_region_features(self, x: torch.Tensor) -> torch.Tensor:
        s = self.cfg.input_size
        if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] != s or x.shape[3] != s:
            raise ShapeMismatch(f"expected N x 3 x {s} x {s} input, got {tuple(x.shape)}")
        return region_features(self.backbone(x))

    def attention_scores(self, features: torch.Tensor) -> torch.Tensor:
        if self.pooling == "mean":
            k = features.shape[-2]
            return torch.full(features.shape[:-1], 1.0 / k, dtype=features.dtype)
        return normalize_scores(self.scorer(features).squeeze(-1))

    def fuse_and_classify(self, features: torch.Tensor, beta: torch.Tensor) -> torch.Tensor:
        if beta.shape != features.shape[:-1]:
            raise ShapeMismatch(f"beta {tuple(beta.shape)} does not match features {tuple(features.shape)}")
        fused = torch.einsum("nk,nkd->nd", beta, features)
        return self.classifier(fused)

    def forward(self, x: torch.Tensor) -> ForwardOutput:
        feats = self.extract_region_features(x)
        beta = self.attention_scores(feats)
        logits = self.fuse_and_classify(feats, beta)
        return ForwardOutput(logits, torch.softmax(logits, dim=-1), beta, feats)


def build_model(cfg: BackboneConfig, seed: int = 0, pooling: str = "attention", dtype=torch.float32) -> PainSeeker:
    """Construct a model with fan-in scaled uniform init drawn from ``seed``."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = PainSeeker(cfg, pooling)
    return model.to(dtype)


def predict_labels(probs: torch.Tensor) -> torch.Tensor:
    """Argmax over classes; exact ties go to the lower class index (no pain)."""
    return torch.argmax(probs, dim=-1)


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: PainSeeker, path, extra: Optional[dict] = None) -> None:
    """Write an ``.npz`` holding the config (JSON) and every state array."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "backbone": model.cfg.to_dict(),
        "pooling": model.pooling,
        "extra": extra or {},
    }
    arrays = {"__meta__": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)}
    for name, t in model.state_dict().items():
        arrays[f"state/{name}"] = t.detach().cpu().numpy()
    path = Path(path)
    with path.open("wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> PainSeeker:
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise InputError(f"unsupported checkpoint version {meta.get('version')}")
        cfg = BackboneConfig.from_dict(meta["backbone"])
        state = {k[len("state/"):]: torch.from_numpy(data[k].copy()) for k in data.files if k.startswith("state/")}
    dtype = next(v.dtype for k, v in state.items() if v.is_floating_point())
    model = PainSeeker(cfg, meta["pooling"]).to(dtype)
    model.load_state_dict(state)
    return model


def import_backbone_weights(model: PainSeeker, path) -> list[str]:
    """Load torchvision-style ResNet weights (``.pt`` state dict) into the backbone.

    Keys outside the backbone (``fc.*``) are ignored. Returns the loaded keys.
    """
    state = torch.load(Path(path), map_location="cpu", weights_only=True)
    own = model.backbone.state_dict()
    loaded = {}
    for k, v in state.items():
        if k in own:
            if own[k].shape != v.shape:
                raise ShapeMismatch(f"{k}: checkpoint shape {tuple(v.shape)} vs model {tuple(own[k].shape)}")
            loaded[k] = v.to(own[k].dtype)
    model.backbone.load_state_dict(loaded, strict=False)
    return sorted(loaded)
