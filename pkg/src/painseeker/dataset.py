"""Image manifests, preprocessing and the synthetic RatsPain stand-in."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import (
    DuplicateImageId,
    EmptyImage,
    InvalidRegionIndex,
    InputError,
    MalformedRow,
    MissingFile,
    NonFiniteStats,
)

MANIFEST_HEADER = ("image_path", "rat_id", "raw_score")
UNLABELED_TOKENS = {"uncertain", "unlabeled"}


def binarize(raw_score: Optional[int]) -> Optional[int]:
    """Merge moderate (1) and severe (2) pain into a single pain class."""
    if raw_score is None:
        return None
    return 0 if raw_score == 0 else 1


@dataclass
class ImageSample:
    image_id: str
    rat_id: str
    pixels: np.ndarray  # H x W x 3, float in [0, 1]
    raw_score: Optional[int] = None

    @property
    def binary_label(self) -> Optional[int]:
        return binarize(self.raw_score)


@dataclass(frozen=True)
class ManifestEntry:
    image_path: str
    rat_id: str
    raw_score: Optional[int]  # None means UNLABELED

    @property
    def image_id(self) -> str:
        return str(Path(self.image_path).with_suffix("")).replace("\\", "/")

    @property
    def labeled(self) -> bool:
        return self.raw_score is not None

    @property
    def binary_label(self) -> Optional[int]:
        return binarize(self.raw_score)


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    root_dir: Path = field(default_factory=Path)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def labeled(self) -> list[ManifestEntry]:
        return [e for e in self.entries if e.labeled]

    @property
    def unlabeled(self) -> list[ManifestEntry]:
        return [e for e in self.entries if not e.labeled]

    @property
    def rat_ids(self) -> list[str]:
        return sorted({e.rat_id for e in self.entries})

    def label_counts(self) -> dict[str, int]:
        """Counts per raw score plus the unlabeled count."""
        counts = {"0": 0, "1": 0, "2": 0, "unlabeled": 0}
        for e in self.entries:
            counts["unlabeled" if e.raw_score is None else str(e.raw_score)] += 1
        return counts

    def resolve(self, entry: ManifestEntry) -> Path:
        return self.root_dir / entry.image_path

    def load_sample(self, entry: ManifestEntry) -> ImageSample:
        return ImageSample(entry.image_id, entry.rat_id, load_image(self.resolve(entry)), entry.raw_score)


def _parse_score(text: str) -> Optional[int]:
    t = text.strip().lower()
    if t in UNLABELED_TOKENS:
        return None
    if t in {"0", "1", "2"}:
        return int(t)
    raise ValueError(f"raw_score must be 0, 1, 2 or uncertain, got {text!r}")


def load_manifest(path) -> DatasetManifest:
    """Parse and validate a manifest CSV (``image_path,rat_id,raw_score``).

    Image paths are resolved relative to the manifest's directory.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"manifest not found: {path}")
    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != MANIFEST_HEADER:
            raise MalformedRow(1, ",".join(header or []), f"expected header {','.join(MANIFEST_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            raw = ",".join(row)
            if len(row) != 3:
                raise MalformedRow(lineno, raw, "expected 3 fields")
            image_path, rat_id, score = (c.strip() for c in row)
            if not image_path or not rat_id:
                raise MalformedRow(lineno, raw, "empty image_path or rat_id")
            try:
                raw_score = _parse_score(score)
            except ValueError as exc:
                raise MalformedRow(lineno, raw, str(exc)) from None
            if image_path in seen:
                raise DuplicateImageId(f"line {lineno}: duplicate image_path {image_path!r}")
            seen.add(image_path)
            entries.append(ManifestEntry(image_path, rat_id, raw_score))
    return DatasetManifest(entries, path.parent)


def write_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for e in manifest.entries:
            w.writerow([e.image_path, e.rat_id, "uncertain" if e.raw_score is None else e.raw_score])


def load_image(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"image not found: {path}")
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    if arr.size == 0:
        raise EmptyImage(f"empty image: {path}")
    return arr


# --------------------------------------------------------------------------
# preprocessing


@dataclass(frozen=True)
class PreprocessConfig:
    target_size: int = 224
    downsample: int = 1  # backbone's total stride; target_size must be a multiple

    def __post_init__(self):
        if self.target_size <= 0 or self.target_size % self.downsample:
            raise InputError(
                f"target_size {self.target_size} is not divisible by the backbone downsampling {self.downsample}"
            )


@dataclass(frozen=True)
class FoldStats:
    """Per-channel mean/std of the training fold (after resizing)."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        if not (np.all(np.isfinite(self.mean)) and np.all(np.isfinite(self.std))):
            raise NonFiniteStats("fold statistics contain NaN/Inf")


def resize_image(pixels: np.ndarray, size: int) -> np.ndarray:
    """Bilinear (antialiased) resize of an H x W [x C] array to size x size."""
    if pixels.size == 0:
        raise EmptyImage("cannot resize an empty image")
    squeeze = pixels.ndim == 2
    arr = pixels[..., None] if squeeze else pixels
    if arr.shape[0] == size and arr.shape[1] == size:
        out = arr.astype(np.float32, copy=True)
    else:
        t = torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32)).permute(2, 0, 1)[None]
        t = F.interpolate(t, size=(size, size), mode="bilinear", align_corners=False, antialias=True)
        out = t[0].permute(1, 2, 0).numpy().copy()
    return out[..., 0] if squeeze else out


def compute_fold_stats(images: Iterable[np.ndarray], eps: float = 1e-6) -> FoldStats:
    """Streamed per-channel mean and std over already-resized training images."""
    total = np.zeros(3)
    total_sq = np.zeros(3)
    count = 0
    for img in images:
        flat = img.reshape(-1, img.shape[-1]).astype(np.float64)
        total += flat.sum(0)
        total_sq += (flat**2).sum(0)
        count += flat.shape[0]
    if count == 0:
        raise EmptyImage("no training pixels to compute statistics from")
    mean = total / count
    var = np.maximum(total_sq / count - mean**2, 0.0)
    return FoldStats(mean, np.sqrt(var) + eps)


def standardize(pixels: np.ndarray, stats: FoldStats) -> np.ndarray:
    return ((pixels - stats.mean) / stats.std).astype(np.float32)


def preprocess(sample: ImageSample | np.ndarray, cfg: PreprocessConfig, stats: FoldStats) -> np.ndarray:
    """Resize to the model geometry and standardize; returns a size x size x 3 array."""
    pixels = sample.pixels if isinstance(sample, ImageSample) else sample
    if pixels is None or pixels.size == 0:
        raise EmptyImage("sample has no pixels")
    return standardize(resize_image(pixels, cfg.target_size), stats)


def to_batch(arrays: Sequence[np.ndarray], dtype=torch.float32) -> torch.Tensor:
    """Stack H x W x 3 arrays into an N x 3 x H x W tensor."""
    return torch.from_numpy(np.stack(arrays)).permute(0, 3, 1, 2).contiguous().to(dtype)


# --------------------------------------------------------------------------
# synthetic dataset


@dataclass(frozen=True)
class SyntheticConfig:
    n_rats: int = 6
    images_per_rat: int = 100
    grid: int = 4
    informative_regions: tuple[int, ...] = (0, 1, 2, 3, 4)
    image_size: int = 64
    seed: int = 0
    texture_amplitude: float = 0.18
    noise_sigma: float = 0.02
    max_brightness_offset: float = 0.12
    max_shift: int = 2

    def __post_init__(self):
        if self.n_rats < 2:
            raise InputError("n_rats must be at least 2")
        if self.images_per_rat < 1:
            raise InputError("images_per_rat must be positive")
        if self.image_size % self.grid:
            raise InputError("image_size must be a multiple of grid")
        if not self.informative_regions:
            raise InvalidRegionIndex("informative_regions must be nonempty")
        bad = [r for r in self.informative_regions if not 0 <= r < self.grid**2]
        if bad:
            raise InvalidRegionIndex(f"region indices {bad} outside 0..{self.grid**2 - 1}")


def _rng(cfg: SyntheticConfig, *keys: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, *keys])


def rat_nuisance(cfg: SyntheticConfig, rat: int) -> tuple[float, int, int]:
    """Per-rat brightness offset and preferred head offset (dy, dx)."""
    rng = _rng(cfg, rat, 0)
    bright = float(rng.uniform(-cfg.max_brightness_offset, cfg.max_brightness_offset))
    dy, dx = (int(v) for v in rng.integers(-cfg.max_shift // 2, cfg.max_shift // 2 + 1, size=2))
    return bright, dy, dx


def _shift(img: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Integer translation with edge replication."""
    h, w = img.shape[:2]
    p = max(abs(dy), abs(dx))
    if p == 0:
        return img
    padded = np.pad(img, ((p, p), (p, p)) + ((0, 0),) * (img.ndim - 2), mode="edge")
    return padded[p - dy : p - dy + h, p - dx : p - dx + w]


def render_synthetic_image(cfg: SyntheticConfig, rat: int, index: int, label: int) -> np.ndarray:
    """Float H x W x 3 image for (rat, index); only the informative cells depend on ``label``."""
    s = cfg.image_size
    cell = s // cfg.grid
    base_rng = _rng(cfg, rat, index + 1, 1)
    # smooth low-frequency background shared by both classes
    coarse = base_rng.normal(0.0, 0.12, size=(s // 16 + 1, s // 16 + 1, 3)).astype(np.float32)
    img = 0.5 + resize_image(coarse, s)
    img = img + base_rng.normal(0.0, cfg.noise_sigma, size=(s, s, 3))
    if label == 1:
        tex_rng = _rng(cfg, rat, index + 1, 2)
        for region in cfg.informative_regions:
            r0, c0 = (region // cfg.grid) * cell, (region % cfg.grid) * cell
            pattern = tex_rng.choice([-1.0, 1.0], size=(cell, cell, 1)) * cfg.texture_amplitude
            img[r0 : r0 + cell, c0 : c0 + cell] += pattern
    bright, rdy, rdx = rat_nuisance(cfg, rat)
    jitter = _rng(cfg, rat, index + 1, 3).integers(-1, 2, size=2)
    dy = int(np.clip(rdy + jitter[0], -cfg.max_shift, cfg.max_shift))
    dx = int(np.clip(rdx + jitter[1], -cfg.max_shift, cfg.max_shift))
    img = _shift(img, dy, dx) + bright
    return np.clip(img, 0.0, 1.0)


def synthetic_labels(cfg: SyntheticConfig, rat: int) -> np.ndarray:
    n = cfg.images_per_rat
    labels = np.zeros(n, dtype=int)
    labels[: n // 2] = 1
    return _rng(cfg, rat, 0, 9).permutation(labels)


def generate_synthetic_dataset(out_dir, cfg: SyntheticConfig | None = None, **kwargs) -> DatasetManifest:
    """Write ``<out_dir>/rat<k>/img<j>.png``, ``manifest.csv`` and ``ground_truth.json``.

    Class-1 images carry a binary high-frequency texture in the informative
    grid cells; class 0 does not. Label ``1`` is written as raw score 1.
    """
    cfg = cfg or SyntheticConfig(**kwargs)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for rat in range(1, cfg.n_rats + 1):
        (out / f"rat{rat}").mkdir(exist_ok=True)
        labels = synthetic_labels(cfg, rat)
        for j, label in enumerate(labels):
            img = render_synthetic_image(cfg, rat, j, int(label))
            rel = f"rat{rat}/img{j}.png"
            Image.fromarray(np.round(img * 255).astype(np.uint8)).save(out / rel, optimize=False)
            entries.append(ManifestEntry(rel, f"rat{rat}", int(label)))
    manifest = DatasetManifest(entries, out)
    write_manifest(manifest, out / "manifest.csv")
    truth = {
        "grid": cfg.grid,
        "informative_regions": sorted(cfg.informative_regions),
        "image_size": cfg.image_size,
        "n_rats": cfg.n_rats,
        "images_per_rat": cfg.images_per_rat,
        "seed": cfg.seed,
        "rat_nuisance": {f"rat{r}": list(rat_nuisance(cfg, r)) for r in range(1, cfg.n_rats + 1)},
    }
    (out / "ground_truth.json").write_text(json.dumps(truth, indent=2) + "\n")
    return manifest
