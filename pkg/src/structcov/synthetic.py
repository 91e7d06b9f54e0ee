"""Synthetic corpora: stationary textures, a fixed target pattern, planted scenes.

Everything is driven by an explicit :class:`numpy.random.Generator` so runs
are reproducible from a seed.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .features import write_pgm
from .stats import FeatureImage, StationaryStats


def texture(rng: np.random.Generator, h: int, w: int, sigma: float = 1.5, contrast: float = 40.0) -> np.ndarray:
    """Stationary Gaussian texture: filtered white noise around mid-grey, as uint8."""
    t = ndimage.gaussian_filter(rng.standard_normal((h, w)), sigma, mode="wrap")
    # fixed scale (std of filtered unit white noise); per-image standardisation
    # would make every image exactly zero-sum and bias long-range covariances
    t *= 2.0 * np.sqrt(np.pi) * sigma
    return np.clip(128.0 + contrast * t, 0, 255).astype(np.uint8)


def pattern(h: int, w: int) -> np.ndarray:
    """Fixed target: a bright upright ellipse with a dark bar across it, in [0, 255]."""
    u = (np.arange(h)[:, None] + 0.5) / h - 0.5
    v = (np.arange(w)[None, :] + 0.5) / w - 0.5
    img = np.full((h, w), 70.0)
    img[(u / 0.42) ** 2 + (v / 0.3) ** 2 <= 1.0] = 220.0
    img[(np.abs(u + 0.1) < 0.07) & (np.abs(v) < 0.36)] = 20.0
    return img


def plant(raster: np.ndarray, pat: np.ndarray, u: int, v: int, rng: np.random.Generator,
          alpha: float = 0.85, noise: float = 12.0) -> np.ndarray:
    out = raster.astype(np.float64).copy()
    h, w = pat.shape
    region = out[u:u + h, v:v + w]
    out[u:u + h, v:v + w] = (1 - alpha) * region + alpha * pat + noise * rng.standard_normal((h, w))
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def positive(rng: np.random.Generator, pat: np.ndarray, **kw) -> np.ndarray:
    """Template-sized positive: the pattern over a texture patch, plus noise."""
    h, w = pat.shape
    return plant(texture(rng, h, w), pat, 0, 0, rng, **kw)


def scene(rng: np.random.Generator, pat: np.ndarray, h: int, w: int, cell: int = 1,
          count: int = 1) -> tuple[np.ndarray, list[tuple[int, int]]]:
    """Texture of ``h x w`` with ``count`` non-overlapping patterns at cell-aligned offsets.

    Returns the raster and the planted top-left corners in feature-grid units.
    """
    ph, pw = pat.shape
    raster = texture(rng, h, w)
    spots: list[tuple[int, int]] = []
    for _ in range(1000):
        if len(spots) == count:
            break
        u = int(rng.integers(0, (h - ph) // cell + 1))
        v = int(rng.integers(0, (w - pw) // cell + 1))
        mu, mv = -(-ph // cell), -(-pw // cell)
        if all(abs(u - a) >= mu or abs(v - b) >= mv for a, b in spots):
            spots.append((u, v))
    if len(spots) < count:
        raise ValueError("scene too small for the requested number of targets")
    for u, v in spots:
        raster = plant(raster, pat, u * cell, v * cell, rng)
    return raster, spots


def feature_texture(rng: np.random.Generator, k: int, h: int, w: int, sigma: float = 1.5) -> FeatureImage:
    """``k`` correlated stationary channels: smoothed noise mixed by a random matrix."""
    base = ndimage.gaussian_filter(rng.standard_normal((k, h, w)), (0, sigma, sigma), mode="wrap")
    mix = np.eye(k) + 0.3 * rng.standard_normal((k, k)) / np.sqrt(k)
    return FeatureImage(np.einsum("pq,quv->puv", mix, base) + 0.1)


@dataclass
class CorpusLayout:
    root: Path
    negatives: Path
    positives: Path
    test: Path
    truths: Path


def write_corpus(root, seed: int = 0, negatives: int = 100, positives: int = 30, test: int = 10,
                 image_size: tuple[int, int] = (128, 128), pattern_size: tuple[int, int] = (32, 24),
                 cell: int = 4, targets: int = 1) -> CorpusLayout:
    """Write a PGM corpus: ``negatives/``, ``positives/``, ``test/`` and ``test/truths.csv``.

    Truth rectangles are in feature-grid units for a transform with ``cell``.
    """
    rng = np.random.default_rng(seed)
    root = Path(root)
    lay = CorpusLayout(root, root / "negatives", root / "positives", root / "test", root / "test" / "truths.csv")
    for d in (lay.negatives, lay.positives, lay.test):
        d.mkdir(parents=True, exist_ok=True)
    pat = pattern(*pattern_size)
    for i in range(negatives):
        write_pgm(lay.negatives / f"neg_{i:04d}.pgm", texture(rng, *image_size))
    for i in range(positives):
        write_pgm(lay.positives / f"pos_{i:04d}.pgm", positive(rng, pat))
    m, n = pattern_size[0] // cell, pattern_size[1] // cell
    with open(lay.truths, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["image", "u", "v", "m", "n"])
        for i in range(test):
            name = f"test_{i:04d}.pgm"
            raster, spots = scene(rng, pat, *image_size, cell=cell, count=targets)
            write_pgm(lay.test / name, raster)
            for u, v in spots:
                out.writerow([name, u, v, m, n])
    return lay


def synthetic_stats(k: int, dmax_u: int, dmax_v: int, rng: np.random.Generator,
                    scales: tuple[float, ...] = (1.0, 3.0), nugget: float = 0.05) -> StationaryStats:
    """Stationary statistics from a known positive-definite covariance model.

    ``g_pq[d] = sum_t A_t[p, q] exp(-|d|^2 / (4 s_t^2)) + nugget [p == q, d == 0]``
    with random PSD channel mixings ``A_t``.  Each term is a Kronecker product
    of PSD factors, so every Toeplitz matrix built from ``g`` is PSD with
    smallest eigenvalue at least ``nugget``.
    """
    du = np.arange(-dmax_u, dmax_u + 1)[:, None]
    dv = np.arange(-dmax_v, dmax_v + 1)[None, :]
    g = np.zeros((k, k, 2 * dmax_u + 1, 2 * dmax_v + 1))
    for s in scales:
        B = rng.standard_normal((k, k)) / np.sqrt(k)
        g += np.einsum("pq,uv->pquv", B @ B.T, np.exp(-(du**2 + dv**2) / (4.0 * s * s)))
    g[np.arange(k), np.arange(k), dmax_u, dmax_v] += nugget
    g = 0.5 * (g + g.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
    return StationaryStats(g, rng.uniform(0.0, 0.5, k), centered=True)
