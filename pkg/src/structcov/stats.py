"""Stationary second-order statistics of multi-channel feature images.

The negative corpus is summarised once into relative-displacement product
sums.  Numerators and denominators are kept unreduced in a
:class:`StationaryAccumulator` so that partial accumulators from different
workers can be merged; :func:`finalize` turns them into a centred
covariance array ``g[p, q, du, dv]`` and per-channel means ``mu[p]``.

Array conventions
-----------------
Feature images and templates are ``(k, rows, cols)`` float arrays.  Arrays
indexed by displacement store ``du`` on axis 2 at offset ``dmax_u`` and
``dv`` on axis 3 at offset ``dmax_v``.
"""
from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import fft as sfft

__all__ = [
    "FeatureImage",
    "StationaryAccumulator",
    "StationaryStats",
    "accumulate_image_fft",
    "accumulate_image_naive",
    "merge",
    "finalize",
    "crop_stats",
    "positive_mean",
    "write_stats",
    "stats_to_bytes",
    "read_stats",
]

STATS_MAGIC = b"STCV"
STATS_VERSION = 1
FLAG_CENTERED = 1


@dataclass(frozen=True)
class FeatureImage:
    """A ``(k, H, W)`` stack of real channel planes."""

    values: np.ndarray
    name: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 2:
            v = v[None]
        if v.ndim != 3 or min(v.shape) < 1:
            raise ValueError(f"feature image {self.name!r}: expected (k, H, W), got shape {v.shape}")
        v = np.ascontiguousarray(v)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def k(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape


def _as_feature_image(f) -> FeatureImage:
    return f if isinstance(f, FeatureImage) else FeatureImage(f)


@dataclass
class StationaryAccumulator:
    """Raw product sums and counts, mergeable across workers.

    ``pair_sums[p, q, du, dv]`` holds ``sum f_p[u, v] * f_q[u + du, v + dv]``
    over every in-bounds pair of every image seen so far, and
    ``pair_counts[du, dv]`` the number of such pairs.
    """

    k: int
    dmax_u: int
    dmax_v: int
    pair_sums: np.ndarray = field(default=None, repr=False)
    pair_counts: np.ndarray = field(default=None, repr=False)
    channel_sums: np.ndarray = field(default=None, repr=False)
    pixel_count: int = 0
    image_count: int = 0

    def __post_init__(self):
        if self.k < 1 or self.dmax_u < 0 or self.dmax_v < 0:
            raise ValueError("k must be >= 1 and displacement extents >= 0")
        nu, nv = 2 * self.dmax_u + 1, 2 * self.dmax_v + 1
        if self.pair_sums is None:
            self.pair_sums = np.zeros((self.k, self.k, nu, nv))
        if self.pair_counts is None:
            self.pair_counts = np.zeros((nu, nv), dtype=np.int64)
        if self.channel_sums is None:
            self.channel_sums = np.zeros(self.k)
        if self.pair_sums.shape != (self.k, self.k, nu, nv) or self.pair_counts.shape != (nu, nv):
            raise ValueError("accumulator arrays do not match k / displacement extent")

    @classmethod
    def empty_like(cls, other: "StationaryAccumulator") -> "StationaryAccumulator":
        return cls(other.k, other.dmax_u, other.dmax_v)

    def add(self, f, method: str = "fft") -> "StationaryAccumulator":
        if method == "fft":
            return accumulate_image_fft(self, f)
        if method == "naive":
            return accumulate_image_naive(self, f)
        raise ValueError(f"unknown accumulation method {method!r}")

    def add_many(self, images: Iterable, method: str = "fft") -> "StationaryAccumulator":
        for f in images:
            self.add(f, method)
        return self


def _check_image(acc: StationaryAccumulator, f: FeatureImage) -> None:
    if f.k != acc.k:
        raise ValueError(f"image {f.name!r} has {f.k} channels, accumulator expects {acc.k}")
    if not np.all(np.isfinite(f.values)):
        raise ValueError(f"image {f.name!r} contains non-finite values")


def _pair_counts(h: int, w: int, dmax_u: int, dmax_v: int) -> np.ndarray:
    cu = np.maximum(h - np.abs(np.arange(-dmax_u, dmax_u + 1)), 0)
    cv = np.maximum(w - np.abs(np.arange(-dmax_v, dmax_v + 1)), 0)
    return np.outer(cu, cv).astype(np.int64)


def _mirror(s: np.ndarray) -> np.ndarray:
    """``out[p, q, du, dv] = s[q, p, -du, -dv]``."""
    return s.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]


def _symmetrize(s: np.ndarray) -> np.ndarray:
    # exact by construction: both halves see the same pair of addends
    return 0.5 * (s + _mirror(s))


def _update(acc: StationaryAccumulator, f: FeatureImage, sums: np.ndarray) -> StationaryAccumulator:
    acc.pair_sums += _symmetrize(sums)
    acc.pair_counts += _pair_counts(f.height, f.width, acc.dmax_u, acc.dmax_v)
    acc.channel_sums += f.values.sum(axis=(1, 2))
    acc.pixel_count += f.height * f.width
    acc.image_count += 1
    return acc


def accumulate_image_fft(acc: StationaryAccumulator, f) -> StationaryAccumulator:
    """Add one image via zero-padded FFT cross-correlation (updates ``acc`` in place)."""
    f = _as_feature_image(f)
    _check_image(acc, f)
    k, h, w = f.shape
    # displacements beyond the image extent see no pairs
    eu, ev = min(acc.dmax_u, h - 1), min(acc.dmax_v, w - 1)
    shape = (sfft.next_fast_len(h + eu, real=True), sfft.next_fast_len(w + ev, real=True))
    spec = sfft.rfft2(f.values, s=shape)
    corr = sfft.irfft2(np.conj(spec)[:, None] * spec[None, :], s=shape)
    rows = np.arange(-eu, eu + 1) % shape[0]
    cols = np.arange(-ev, ev + 1) % shape[1]
    sums = np.zeros_like(acc.pair_sums)
    sums[:, :, acc.dmax_u - eu:acc.dmax_u + eu + 1, acc.dmax_v - ev:acc.dmax_v + ev + 1] = (
        corr[:, :, rows][:, :, :, cols]
    )
    return _update(acc, f, sums)


def accumulate_image_naive(acc: StationaryAccumulator, f) -> StationaryAccumulator:
    """Direct double-sum over every displacement; the reference path for the FFT route."""
    f = _as_feature_image(f)
    _check_image(acc, f)
    k, h, w = f.shape
    x = f.values
    sums = np.zeros_like(acc.pair_sums)
    for du in range(-min(acc.dmax_u, h - 1), min(acc.dmax_u, h - 1) + 1):
        u0, u1 = max(0, -du), min(h, h - du)
        for dv in range(-min(acc.dmax_v, w - 1), min(acc.dmax_v, w - 1) + 1):
            v0, v1 = max(0, -dv), min(w, w - dv)
            a = x[:, u0:u1, v0:v1]
            b = x[:, u0 + du:u1 + du, v0 + dv:v1 + dv]
            sums[:, :, du + acc.dmax_u, dv + acc.dmax_v] = np.einsum("pij,qij->pq", a, b)
    return _update(acc, f, sums)


def merge(a: StationaryAccumulator, b: StationaryAccumulator) -> StationaryAccumulator:
    if (a.k, a.dmax_u, a.dmax_v) != (b.k, b.dmax_u, b.dmax_v):
        raise ValueError(
            f"cannot merge accumulators with shapes {(a.k, a.dmax_u, a.dmax_v)} and {(b.k, b.dmax_u, b.dmax_v)}"
        )
    return StationaryAccumulator(
        a.k,
        a.dmax_u,
        a.dmax_v,
        pair_sums=a.pair_sums + b.pair_sums,
        pair_counts=a.pair_counts + b.pair_counts,
        channel_sums=a.channel_sums + b.channel_sums,
        pixel_count=a.pixel_count + b.pixel_count,
        image_count=a.image_count + b.image_count,
    )


@dataclass(frozen=True)
class StationaryStats:
    """Relative-displacement covariance ``g`` and stationary channel means ``mu``."""

    g: np.ndarray
    mu: np.ndarray
    centered: bool = True
    image_count: int = 0
    pixel_count: int = 0

    def __post_init__(self):
        g = np.ascontiguousarray(self.g, dtype=np.float64)
        mu = np.ascontiguousarray(self.mu, dtype=np.float64).reshape(-1)
        if g.ndim != 4 or g.shape[0] != g.shape[1] or g.shape[2] % 2 == 0 or g.shape[3] % 2 == 0:
            raise ValueError(f"g must have shape (k, k, 2*dmax_u+1, 2*dmax_v+1), got {g.shape}")
        if mu.shape != (g.shape[0],):
            raise ValueError("mu must have one entry per channel")
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(mu))):
            raise ValueError("statistics contain non-finite values")
        g.setflags(write=False)
        mu.setflags(write=False)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "mu", mu)

    @property
    def k(self) -> int:
        return self.g.shape[0]

    @property
    def dmax_u(self) -> int:
        return self.g.shape[2] // 2

    @property
    def dmax_v(self) -> int:
        return self.g.shape[3] // 2

    @property
    def max_template(self) -> tuple[int, int]:
        return self.dmax_u + 1, self.dmax_v + 1

    def at(self, p: int, q: int, du: int, dv: int) -> float:
        return float(self.g[p, q, du + self.dmax_u, dv + self.dmax_v])

    def symmetry_error(self) -> float:
        return float(np.max(np.abs(self.g - _mirror(self.g))))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.asarray(self.g.shape, dtype="<u4").tobytes())
        h.update(self.g.astype("<f8").tobytes())
        h.update(self.mu.astype("<f8").tobytes())
        return h.hexdigest()[:16]


def finalize(
    acc: StationaryAccumulator, centered: bool = True, extent: tuple[int, int] | None = None
) -> StationaryStats:
    """Normalise sums by per-displacement counts and subtract ``mu_p * mu_q``.

    ``extent`` optionally restricts the result to templates of at most
    ``(rows, cols)``; every displacement inside it must have been observed.
    """
    if acc.pixel_count <= 0:
        raise ValueError("accumulator has seen no pixels")
    eu, ev = acc.dmax_u, acc.dmax_v
    if extent is not None:
        eu, ev = extent[0] - 1, extent[1] - 1
        if eu < 0 or ev < 0 or eu > acc.dmax_u or ev > acc.dmax_v:
            raise ValueError(
                f"requested extent {extent} outside tracked extent {(acc.dmax_u + 1, acc.dmax_v + 1)}"
            )
    su = slice(acc.dmax_u - eu, acc.dmax_u + eu + 1)
    sv = slice(acc.dmax_v - ev, acc.dmax_v + ev + 1)
    counts = acc.pair_counts[su, sv]
    missing = np.argwhere(counts == 0)
    if missing.size:
        du, dv = missing[0] - (eu, ev)
        raise ValueError(
            f"no pixel pairs observed at displacement ({du}, {dv}); corpus images too small "
            f"for a {eu + 1}x{ev + 1} template"
        )
    mu = acc.channel_sums / acc.pixel_count
    g = acc.pair_sums[:, :, su, sv] / counts
    if centered:
        g = g - np.multiply.outer(mu, mu)[:, :, None, None]
    return StationaryStats(g, mu, centered=centered, image_count=acc.image_count, pixel_count=acc.pixel_count)


def crop_stats(s: StationaryStats, m: int, n: int) -> StationaryStats:
    """Restrict to the displacements needed by an ``m x n`` template."""
    if m < 1 or n < 1:
        raise ValueError("template extent must be at least 1x1")
    if m - 1 > s.dmax_u or n - 1 > s.dmax_v:
        raise ValueError(
            f"stats support templates up to {s.dmax_u + 1}x{s.dmax_v + 1}, requested {m}x{n}"
        )
    g = s.g[:, :, s.dmax_u - (m - 1):s.dmax_u + m, s.dmax_v - (n - 1):s.dmax_v + n]
    return StationaryStats(g, s.mu, s.centered, s.image_count, s.pixel_count)


def positive_mean(examples: Sequence, m: int, n: int) -> np.ndarray:
    """Element-wise mean of template-sized positive examples, shape ``(k, m, n)``."""
    if len(examples) == 0:
        raise ValueError("no positive examples")
    arrs = [_as_feature_image(x).values for x in examples]
    k = arrs[0].shape[0]
    for i, a in enumerate(arrs):
        if a.shape != (k, m, n):
            raise ValueError(f"positive example {i} has shape {a.shape}, expected {(k, m, n)}")
    return np.mean(np.stack(arrs), axis=0)


# -- STCV file format --------------------------------------------------------

_HEADER = struct.Struct("<4sIIIIIQQ")


def write_stats(s: StationaryStats, dest) -> None:
    """Write ``s`` as a little-endian STCV file (path or binary stream)."""
    header = _HEADER.pack(
        STATS_MAGIC,
        STATS_VERSION,
        s.k,
        s.dmax_u,
        s.dmax_v,
        FLAG_CENTERED if s.centered else 0,
        s.image_count,
        s.pixel_count,
    )
    payload = header + s.mu.astype("<f8").tobytes() + s.g.astype("<f8").tobytes()
    if isinstance(dest, (str, Path)):
        Path(dest).write_bytes(payload)
    else:
        dest.write(payload)


def stats_to_bytes(s: StationaryStats) -> bytes:
    buf = io.BytesIO()
    write_stats(s, buf)
    return buf.getvalue()


def read_stats(src) -> StationaryStats:
    if isinstance(src, (bytes, bytearray, memoryview)):
        data = bytes(src)
    elif isinstance(src, (str, Path)):
        data = Path(src).read_bytes()
    else:
        data = src.read()
    if len(data) < _HEADER.size:
        raise ValueError("truncated stats file")
    magic, version, k, du, dv, flags, n_img, n_pix = _HEADER.unpack_from(data)
    if magic != STATS_MAGIC:
        raise ValueError(f"bad magic {magic!r}, expected {STATS_MAGIC!r}")
    if version != STATS_VERSION:
        raise ValueError(f"unsupported stats version {version}")
    n_g = k * k * (2 * du + 1) * (2 * dv + 1)
    expected = _HEADER.size + 8 * (k + n_g)
    if len(data) != expected:
        raise ValueError(f"stats file has {len(data)} bytes, expected {expected}")
    off = _HEADER.size
    mu = np.frombuffer(data, "<f8", k, off).astype(np.float64)
    g = np.frombuffer(data, "<f8", n_g, off + 8 * k).astype(np.float64)
    g = g.reshape(k, k, 2 * du + 1, 2 * dv + 1)
    return StationaryStats(g, mu, bool(flags & FLAG_CENTERED), n_img, n_pix)
