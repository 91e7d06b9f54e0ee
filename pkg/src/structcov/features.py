"""Feature transforms from grayscale rasters to :class:`FeatureImage`.

``identity`` keeps intensities (scaled to [0, 1]); ``hoglite`` is a small
histogram-of-oriented-gradients: unsigned orientations, central
differences, linear voting between the two nearest bins and per-cell L2
normalisation.  Neither tries to reproduce the 31-channel HOG variant.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .stats import FeatureImage

HOG_EPS = 1e-6
DEFAULT_CELL = 4
DEFAULT_BINS = 8


def _raster_array(raster) -> np.ndarray:
    if isinstance(raster, FeatureImage):
        if raster.k != 1:
            raise ValueError("expected a single-channel image")
        return raster.values[0]
    a = np.asarray(raster)
    if a.ndim == 3 and a.shape[0] == 1:
        a = a[0]
    if a.ndim != 2 or a.size == 0:
        raise ValueError(f"expected a non-empty 2-D raster, got shape {a.shape}")
    if np.issubdtype(a.dtype, np.integer):
        return a.astype(np.float64) / 255.0
    return a.astype(np.float64)


def identity_transform(raster, name: str = "") -> FeatureImage:
    """Integer rasters are read as 8-bit and scaled to [0, 1]; float rasters pass through."""
    return FeatureImage(_raster_array(raster)[None], name)


def _gradients(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # central differences inside, full one-sided differences on the border rows/columns
    if min(img.shape) < 2:
        z = np.zeros_like(img)
        gy = np.gradient(img, axis=0) if img.shape[0] > 1 else z
        gx = np.gradient(img, axis=1) if img.shape[1] > 1 else z
        return gy, gx
    gy, gx = np.gradient(img)
    return gy, gx


def hoglite_transform(raster, cell: int = DEFAULT_CELL, bins: int = DEFAULT_BINS, name: str = "") -> FeatureImage:
    img = _raster_array(raster)
    h, w = img.shape
    if cell < 1 or bins < 1:
        raise ValueError("cell and bins must be positive")
    if h < cell or w < cell:
        raise ValueError(f"raster {h}x{w} is smaller than one {cell}x{cell} cell")
    gy, gx = _gradients(img)
    mag = np.hypot(gx, gy)
    # unsigned orientation in bin units; bin b is centred on b * pi / bins
    pos = np.mod(np.arctan2(gy, gx), np.pi) * (bins / np.pi)
    lo = np.floor(pos).astype(np.int64) % bins
    frac = pos - np.floor(pos)
    hi = (lo + 1) % bins

    rows, cols = h // cell, w // cell
    crop = (slice(0, rows * cell), slice(0, cols * cell))
    cell_id = (np.arange(rows * cell)[:, None] // cell) * cols + (np.arange(cols * cell)[None, :] // cell)
    cell_id = cell_id.reshape(-1) * bins
    size = rows * cols * bins
    hist = np.bincount(cell_id + lo[crop].reshape(-1), (mag * (1 - frac))[crop].reshape(-1), size)
    hist += np.bincount(cell_id + hi[crop].reshape(-1), (mag * frac)[crop].reshape(-1), size)
    hist = hist.reshape(rows * cols, bins)
    hist /= np.sqrt(np.sum(hist**2, axis=1, keepdims=True) + HOG_EPS**2)
    return FeatureImage(hist.reshape(rows, cols, bins).transpose(2, 0, 1), name)


@dataclass(frozen=True)
class FeatureTransform:
    name: str = "identity"
    cell: int = DEFAULT_CELL
    bins: int = DEFAULT_BINS

    def __post_init__(self):
        if self.name not in ("identity", "hoglite"):
            raise ValueError(f"unknown feature transform {self.name!r}")

    @property
    def k(self) -> int:
        return 1 if self.name == "identity" else self.bins

    @property
    def cell_size(self) -> int:
        return 1 if self.name == "identity" else self.cell

    def __call__(self, raster, name: str = "") -> FeatureImage:
        if self.name == "identity":
            return identity_transform(raster, name)
        return hoglite_transform(raster, self.cell, self.bins, name)

    def to_metadata(self) -> dict:
        return {"features": self.name, "cell": str(self.cell_size), "bins": str(self.k)}

    @classmethod
    def from_metadata(cls, meta: dict) -> "FeatureTransform":
        name = meta.get("features", "identity")
        return cls(name, int(meta.get("cell", DEFAULT_CELL)), int(meta.get("bins", DEFAULT_BINS)))


RASTER_SUFFIXES = (".pgm", ".png", ".pnm")


def read_raster(path) -> np.ndarray:
    """Load an 8-bit grayscale raster (PGM P5 baseline; anything Pillow decodes)."""
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8)


def write_pgm(path, raster: np.ndarray) -> None:
    a = np.asarray(raster)
    if a.dtype != np.uint8:
        a = np.clip(np.rint(a), 0, 255).astype(np.uint8)
    Image.fromarray(a).save(Path(path), format="PPM")


def list_rasters(directory) -> list[Path]:
    d = Path(directory)
    return sorted(p for p in d.iterdir() if p.is_file() and p.suffix.lower() in RASTER_SUFFIXES)
