"""Local binary patterns with uniform (u2) spatial histograms."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from ..dataset import ImageSample, resize_image
from ..errors import ImageTooSmallForRadius, InputError, OutOfBounds

LUMA = np.array([0.299, 0.587, 0.114])
U2_BINS = 59


@dataclass(frozen=True)
class LBPConfig:
    radius: int = 1
    neighbors: int = 8
    grid: int = 4
    image_size: int = 224
    # "nearest" rounds each circular sample to the closest pixel, so codes
    # depend only on intensity order; "bilinear" interpolates off-grid samples
    interpolation: str = "nearest"

    def __post_init__(self):
        if self.neighbors != 8:
            raise InputError("only P=8 neighbors is supported (59-bin u2 mapping)")
        if self.radius < 1:
            raise InputError("radius must be >= 1")
        if self.grid < 1:
            raise InputError("grid must be >= 1")
        if self.interpolation not in ("nearest", "bilinear"):
            raise InputError(f"unknown interpolation {self.interpolation!r}")

    @property
    def feature_length(self) -> int:
        return self.grid * self.grid * U2_BINS

    @property
    def name(self) -> str:
        return f"LBP_R{self.radius}P{self.neighbors} ({self.grid}x{self.grid})"

    @property
    def key(self) -> str:
        return hashlib.sha1(repr(sorted(asdict(self).items())).encode()).hexdigest()[:12]


def to_grayscale(pixels: np.ndarray) -> np.ndarray:
    if pixels.ndim == 2:
        return pixels.astype(np.float64)
    return pixels[..., :3].astype(np.float64) @ LUMA


def sample_offsets(cfg: LBPConfig) -> list[tuple[float, float]]:
    """(dy, dx) of each neighbor; bit 0 at angle 0, counterclockwise on screen."""
    out = []
    for p in range(cfg.neighbors):
        theta = 2 * np.pi * p / cfg.neighbors
        dy, dx = round(-cfg.radius * np.sin(theta), 9), round(cfg.radius * np.cos(theta), 9)
        if cfg.interpolation == "nearest":
            dy, dx = float(np.rint(dy)), float(np.rint(dx))
        out.append((dy + 0.0, dx + 0.0))
    return out


def border(cfg: LBPConfig) -> int:
    offs = sample_offsets(cfg)
    return int(np.ceil(max(max(abs(dy), abs(dx)) for dy, dx in offs)))


def _sample(gray: np.ndarray, y: float, x: float) -> float:
    y0, x0 = int(np.floor(y)), int(np.floor(x))
    fy, fx = y - y0, x - x0
    if fy == 0 and fx == 0:
        return float(gray[y0, x0])
    y1, x1 = min(y0 + 1, gray.shape[0] - 1), min(x0 + 1, gray.shape[1] - 1)
    return float(
        (1 - fy) * (1 - fx) * gray[y0, x0] + (1 - fy) * fx * gray[y0, x1]
        + fy * (1 - fx) * gray[y1, x0] + fy * fx * gray[y1, x1]
    )


def lbp_code(gray: np.ndarray, center: tuple[int, int], cfg: LBPConfig) -> int:
    """Code at ``center = (x, y)`` (column, row)."""
    x, y = center
    m = border(cfg)
    h, w = gray.shape
    if not (m <= y < h - m and m <= x < w - m):
        raise OutOfBounds(f"neighborhood of radius {cfg.radius} around (x={x}, y={y}) leaves the {w}x{h} image")
    c = gray[y, x]
    code = 0
    for p, (dy, dx) in enumerate(sample_offsets(cfg)):
        if _sample(gray, y + dy, x + dx) >= c:
            code |= 1 << p
    return code


def lbp_codes(gray: np.ndarray, cfg: LBPConfig) -> np.ndarray:
    """Codes for every pixel whose neighborhood fits; shape (H - 2m, W - 2m)."""
    m = border(cfg)
    h, w = gray.shape
    if h < 2 * m + 1 or w < 2 * m + 1:
        raise ImageTooSmallForRadius(f"{w}x{h} image too small for radius {cfg.radius}")
    g = gray.astype(np.float64)
    center = g[m : h - m, m : w - m]
    codes = np.zeros(center.shape, dtype=np.int64)

    def window(oy: int, ox: int) -> np.ndarray:
        return g[m + oy : h - m + oy, m + ox : w - m + ox]

    for p, (dy, dx) in enumerate(sample_offsets(cfg)):
        y0, x0 = int(np.floor(dy)), int(np.floor(dx))
        fy, fx = dy - y0, dx - x0
        if fy == 0 and fx == 0:
            neighbor = window(y0, x0)
        else:
            neighbor = ((1 - fy) * (1 - fx) * window(y0, x0) + (1 - fy) * fx * window(y0, x0 + 1)
                        + fy * (1 - fx) * window(y0 + 1, x0) + fy * fx * window(y0 + 1, x0 + 1))
        codes |= (neighbor >= center).astype(np.int64) << p
    return codes


def _transitions(code: int, bits: int = 8) -> int:
    return sum(((code >> i) & 1) != ((code >> ((i + 1) % bits)) & 1) for i in range(bits))


@lru_cache(maxsize=None)
def uniform_mapping(bits: int = 8) -> np.ndarray:
    """u2 table: uniform codes get bins 0..57 in increasing code order, others 58."""
    table = np.full(1 << bits, -1, dtype=np.int64)
    uniform = [c for c in range(1 << bits) if _transitions(c, bits) <= 2]
    for i, c in enumerate(uniform):
        table[c] = i
    table[table < 0] = len(uniform)
    table.setflags(write=False)
    return table


def lbp_histograms(gray: np.ndarray, cfg: LBPConfig) -> np.ndarray:
    """Concatenated row-major per-cell u2 histograms, each L1-normalized.

    Cells partition the full image; border pixels whose neighborhood leaves
    the image are skipped.
    """
    h, w = gray.shape
    m = border(cfg)
    bins = uniform_mapping(cfg.neighbors)[lbp_codes(gray, cfg)]
    rows = (np.arange(m, h - m) * cfg.grid) // h
    cols = (np.arange(m, w - m) * cfg.grid) // w
    cell = rows[:, None] * cfg.grid + cols[None, :]
    hist = np.bincount((cell * U2_BINS + bins).ravel(), minlength=cfg.feature_length).reshape(-1, U2_BINS)
    hist = hist.astype(np.float64)
    sums = hist.sum(1, keepdims=True)
    np.divide(hist, sums, out=hist, where=sums > 0)
    return hist.ravel()


def lbp_feature(image: ImageSample | np.ndarray, cfg: LBPConfig) -> np.ndarray:
    """Grayscale, resize to ``cfg.image_size`` and compute the spatial histogram."""
    pixels = image.pixels if isinstance(image, ImageSample) else image
    gray = to_grayscale(np.asarray(pixels))
    if gray.shape != (cfg.image_size, cfg.image_size):
        gray = resize_image(gray.astype(np.float32), cfg.image_size).astype(np.float64)
    return lbp_histograms(gray, cfg)


class FeatureCache:
    """On-disk ``.npz`` store of features keyed by image id and config hash."""

    def __init__(self, directory):
        self.directory = Path(directory)

    def path(self, cfg: LBPConfig) -> Path:
        return self.directory / f"lbp_{cfg.key}.npz"

    def load(self, cfg: LBPConfig) -> dict[str, np.ndarray]:
        p = self.path(cfg)
        if not p.exists():
            return {}
        with np.load(p, allow_pickle=False) as data:
            return dict(zip(data["ids"].tolist(), data["features"]))

    def get(self, cfg: LBPConfig, ids: Sequence[str], compute: Callable[[str], np.ndarray]) -> np.ndarray:
        cached = self.load(cfg)
        missing = [i for i in ids if i not in cached]
        for i in missing:
            cached[i] = compute(i)
        if missing:
            self.directory.mkdir(parents=True, exist_ok=True)
            keys = sorted(cached)
            np.savez(self.path(cfg), ids=np.array(keys), features=np.stack([cached[k] for k in keys]))
        return np.stack([cached[i] for i in ids]) if ids else np.zeros((0, cfg.feature_length))
