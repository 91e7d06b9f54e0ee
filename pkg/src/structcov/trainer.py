"""LDA detector training against shared stationary statistics.

``S w = b`` is solved with ``S`` the (regularised) negative covariance and
``b`` the positive mean minus the stationary negative mean.  Four back-ends:

``cholesky``   dense factorisation of the Toeplitz matrix
``cg``         conjugate gradient with FFT Toeplitz products
``pcg``        CG preconditioned by the projected circulant
``circulant``  closed-form solve of the projected circulant system

Set-up products (slice transforms, circulant factors, dense factors) are
cached per statistics / geometry / lambda in a :class:`TrainingCache`, so
only the first detector of a given size pays the cold cost.
"""
from __future__ import annotations

import io
import struct
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .circulant import CirculantFactorization, project_from_toeplitz
from .errors import TrainingError
from .layout import from_dense, to_dense
from .solvers import DenseCholesky, SolveOptions, SolveReport, cg, pcg
from .stats import StationaryStats, crop_stats
from .toeplitz import DEFAULT_LAMBDA, ToeplitzOperator

METHODS = ("cholesky", "cg", "pcg", "circulant")
_ALIASES = {"chol": "cholesky", "circ": "circulant"}

DETECTOR_MAGIC = b"DTEC"
DETECTOR_VERSION = 1


def canonical_method(name: str) -> str:
    method = _ALIASES.get(name, name)
    if method not in METHODS:
        raise ValueError(f"unknown method {name!r}; choose from {', '.join(METHODS)} (or chol, circ)")
    return method


@dataclass
class DetectorTemplate:
    weights: np.ndarray
    threshold: float = 0.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 3:
            raise ValueError(f"weights must be (k, m, n), got shape {self.weights.shape}")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("detector weights are not finite")

    @property
    def k(self) -> int:
        return self.weights.shape[0]

    @property
    def m(self) -> int:
        return self.weights.shape[1]

    @property
    def n(self) -> int:
        return self.weights.shape[2]


@dataclass
class TrainRequest:
    stats: StationaryStats
    pos_mean: np.ndarray
    method: str = "pcg"
    lam: float = DEFAULT_LAMBDA
    options: SolveOptions = field(default_factory=SolveOptions)
    diagnostics: bool = True

    def __post_init__(self):
        self.method = canonical_method(self.method)
        self.pos_mean = np.asarray(self.pos_mean, dtype=np.float64)
        if self.pos_mean.ndim != 3 or self.pos_mean.shape[0] != self.stats.k:
            raise ValueError(
                f"positive mean has shape {self.pos_mean.shape}, expected ({self.stats.k}, m, n)"
            )
        m, n = self.geometry
        if m - 1 > self.stats.dmax_u or n - 1 > self.stats.dmax_v:
            raise ValueError(
                f"stats support templates up to {self.stats.dmax_u + 1}x{self.stats.dmax_v + 1}, "
                f"requested {m}x{n}"
            )
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")

    @property
    def geometry(self) -> tuple[int, int]:
        return self.pos_mean.shape[1], self.pos_mean.shape[2]


def build_rhs(pos_mean: np.ndarray, stats: StationaryStats) -> np.ndarray:
    """``b_p[u, v] = pos_mean_p[u, v] - mu_p``."""
    pos_mean = np.asarray(pos_mean, dtype=np.float64)
    if pos_mean.ndim != 3 or pos_mean.shape[0] != stats.k:
        raise ValueError(f"positive mean has shape {pos_mean.shape}, stats have k={stats.k}")
    return pos_mean - stats.mu[:, None, None]


class TrainingCache:
    """Thread-safe store of per-geometry set-up products."""

    def __init__(self):
        self._items: dict[tuple, object] = {}
        self._lock = threading.Lock()

    def get(self, key: tuple, build):
        """Return ``(value, seconds spent building)``; zero seconds on a hit."""
        with self._lock:
            if key in self._items:
                return self._items[key], 0.0
            t0 = time.perf_counter()
            value = build()
            self._items[key] = value
            return value, time.perf_counter() - t0

    def peek(self, key: tuple):
        with self._lock:
            return self._items.get(key)

    def clear(self) -> None:
        with self._lock:
            self._items.clear()

    def __len__(self) -> int:
        return len(self._items)


class Trainer:
    def __init__(self, cache: TrainingCache | None = None):
        self.cache = cache if cache is not None else TrainingCache()

    def _key(self, kind: str, req: TrainRequest) -> tuple:
        return (kind, req.stats.fingerprint(), *req.geometry, req.lam)

    def toeplitz(self, req: TrainRequest):
        m, n = req.geometry
        return self.cache.get(self._key("toeplitz", req), lambda: ToeplitzOperator.from_stats(req.stats, m, n, req.lam))

    def circulant(self, req: TrainRequest):
        m, n = req.geometry
        return self.cache.get(
            self._key("circulant", req),
            lambda: CirculantFactorization(project_from_toeplitz(crop_stats(req.stats, m, n).g, m, n, req.lam)),
        )

    def dense(self, req: TrainRequest):
        m, n = req.geometry

        def build():
            T = ToeplitzOperator.from_stats(req.stats, m, n, req.lam)
            return DenseCholesky(T.densify())

        return self.cache.get(self._key("dense", req), build)

    def train(self, req: TrainRequest) -> tuple[DetectorTemplate, SolveReport]:
        b = build_rhs(req.pos_mean, req.stats)
        if not np.any(b):
            raise ValueError("positive mean equals the negative mean; nothing to discriminate")
        k, (m, n) = req.stats.k, req.geometry
        method = req.method
        try:
            if method == "cholesky":
                factor, cold = self.dense(req)
                t0 = time.perf_counter()
                w = from_dense(factor.solve(to_dense(b)), k, m, n)
                report = SolveReport(w, 1, float("nan"), True, method, cold_time=cold,
                                     warm_time=time.perf_counter() - t0)
            elif method == "cg":
                T, cold = self.toeplitz(req)
                report = cg(T, b, req.options)
                report.cold_time = cold
            elif method == "pcg":
                T, cold_t = self.toeplitz(req)
                F, cold_c = self.circulant(req)
                report = pcg(T, F, b, req.options)
                report.cold_time = cold_t + cold_c
            else:
                F, cold = self.circulant(req)
                t0 = time.perf_counter()
                w = F.solve(b)
                report = SolveReport(w, 1, float("nan"), True, method, cold_time=cold,
                                     warm_time=time.perf_counter() - t0)
        except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            raise TrainingError(f"training with method {method!r} failed: {exc}", method) from exc
        report.method = method

        if req.diagnostics:
            T = self.cache.peek(self._key("toeplitz", req)) or ToeplitzOperator.from_stats(req.stats, m, n, req.lam)
            tres = float(np.linalg.norm(T(report.solution) - b) / np.linalg.norm(b))
            report.extra["toeplitz_residual"] = tres
            if method == "cholesky":
                report.residual = tres
                report.history = [1.0, tres]
                report.history_times = [0.0, report.warm_time]
            elif method == "circulant":
                C = project_from_toeplitz(crop_stats(req.stats, m, n).g, m, n, req.lam)
                report.residual = float(np.linalg.norm(C(report.solution) - b) / np.linalg.norm(b))
                report.history = [1.0, report.residual]
                report.history_times = [0.0, report.warm_time]

        metadata = {
            "method": method,
            "lambda": repr(req.lam),
            "tol": repr(req.options.tolerance),
            "iterations": str(report.iterations),
            "residual": repr(report.residual),
            "stats": req.stats.fingerprint(),
            "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }
        if "toeplitz_residual" in report.extra:
            metadata["toeplitz_residual"] = repr(report.extra["toeplitz_residual"])
        return DetectorTemplate(report.solution, 0.0, metadata), report


def train(req: TrainRequest, cache: TrainingCache | None = None) -> tuple[DetectorTemplate, SolveReport]:
    return Trainer(cache).train(req)


def calibrate_threshold(det: DetectorTemplate, pos_scores, neg_scores) -> float:
    """Midpoint of the class score means; stored on ``det``."""
    pos = np.asarray(pos_scores, dtype=np.float64).reshape(-1)
    neg = np.asarray(neg_scores, dtype=np.float64).reshape(-1)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("threshold calibration needs positive and negative scores")
    c = 0.5 * (pos.mean() + neg.mean())
    det.threshold = float(c)
    det.metadata["threshold_rule"] = "midpoint"
    return det.threshold


# -- DTEC file format --------------------------------------------------------

_HEAD = struct.Struct("<4sIIIId")


def detector_to_bytes(det: DetectorTemplate) -> bytes:
    meta = "".join(f"{key}={value}\n" for key, value in det.metadata.items()).encode("utf-8")
    return (
        _HEAD.pack(DETECTOR_MAGIC, DETECTOR_VERSION, det.k, det.m, det.n, det.threshold)
        + to_dense(det.weights).astype("<f8").tobytes()
        + struct.pack("<I", len(meta))
        + meta
    )


def write_detector(det: DetectorTemplate, dest) -> None:
    data = detector_to_bytes(det)
    if isinstance(dest, (str, Path)):
        Path(dest).write_bytes(data)
    else:
        dest.write(data)


def read_detector(src) -> DetectorTemplate:
    if isinstance(src, (bytes, bytearray, memoryview)):
        data = bytes(src)
    elif isinstance(src, (str, Path)):
        data = Path(src).read_bytes()
    else:
        data = src.read()
    buf = io.BytesIO(data)
    head = buf.read(_HEAD.size)
    if len(head) != _HEAD.size:
        raise ValueError("truncated detector file")
    magic, version, k, m, n, threshold = _HEAD.unpack(head)
    if magic != DETECTOR_MAGIC:
        raise ValueError(f"bad magic {magic!r}, expected {DETECTOR_MAGIC!r}")
    if version != DETECTOR_VERSION:
        raise ValueError(f"unsupported detector version {version}")
    raw = buf.read(8 * k * m * n)
    tail = buf.read(4)
    if len(raw) != 8 * k * m * n or len(tail) != 4:
        raise ValueError("truncated detector file")
    (meta_len,) = struct.unpack("<I", tail)
    meta_raw = buf.read(meta_len)
    if len(meta_raw) != meta_len or buf.read(1):
        raise ValueError("detector metadata length does not match file size")
    metadata = {}
    for line in meta_raw.decode("utf-8").splitlines():
        if line:
            key, _, value = line.partition("=")
            metadata[key] = value
    w = from_dense(np.frombuffer(raw, "<f8").astype(np.float64), k, m, n)
    return DetectorTemplate(w, threshold, metadata)
