"""Timing and memory benchmark across the four training back-ends.

Memory is computed from the data model, not sampled: the bytes of set-up
data each method caches per template size (dense factor, slice
transforms, per-bin circulant factors).  Work vectors and FFT scratch are
``O(kd)`` for every method and are left out.
"""
from __future__ import annotations

import csv
import logging
import statistics
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from scipy import fft as sfft

from .circulant import CirculantFactorization, project_from_toeplitz
from .errors import NotPositiveDefiniteError, TrainingError
from .solvers import SolveOptions, write_history_csv
from .stats import StationaryStats
from .synthetic import synthetic_stats
from .toeplitz import DEFAULT_LAMBDA
from .trainer import METHODS, Trainer, TrainRequest, TrainingCache, canonical_method

log = logging.getLogger(__name__)

F8, C16 = 8, 16


@dataclass
class BenchRow:
    method: str
    k: int
    m: int
    n: int
    lam: float
    tol: float
    iterations: int
    cold_time: float
    warm_time: float
    memory_bytes: int
    residual: float
    repeat: int = 0


def toeplitz_grid(m: int, n: int) -> tuple[int, int]:
    return sfft.next_fast_len(2 * m - 1), sfft.next_fast_len(2 * n - 1)


def slice_bytes(k: int, m: int, n: int) -> int:
    """Cached transforms of the ``k(k+1)/2`` independent channel-pair slices."""
    P, Q = toeplitz_grid(m, n)
    return (k * (k + 1) // 2) * P * (Q // 2 + 1) * C16


def circulant_factor_bytes(k: int, m: int, n: int) -> int:
    """One inverse Cholesky factor per bin of the half spectrum."""
    return m * (n // 2 + 1) * k * k * C16


def memory_model(method: str, k: int, m: int, n: int) -> int:
    method = canonical_method(method)
    d = k * m * n
    if method == "cholesky":
        return d * d * F8
    if method == "cg":
        return slice_bytes(k, m, n)
    if method == "pcg":
        return slice_bytes(k, m, n) + circulant_factor_bytes(k, m, n)
    return circulant_factor_bytes(k, m, n)


def parse_size(text: str) -> tuple[int, int]:
    a, sep, b = text.lower().partition("x")
    if not sep:
        raise ValueError(f"size must look like MxN, got {text!r}")
    m, n = int(a), int(b)
    if m < 1 or n < 1:
        raise ValueError(f"size must be positive, got {text!r}")
    return m, n


def synthetic_rhs(stats: StationaryStats, m: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """A smooth positive mean so ``b`` resembles a real template."""
    b = rng.standard_normal((stats.k, m, n))
    b = 0.5 * (b + np.roll(b, 1, axis=1))
    return stats.mu[:, None, None] + b


def _row_csv_header() -> list[str]:
    return [f.name for f in fields(BenchRow)]


def write_rows_csv(rows, path_or_file) -> None:
    def emit(fh):
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(_row_csv_header())
        for r in rows:
            out.writerow([repr(v) if isinstance(v, float) else v for v in asdict(r).values()])

    if hasattr(path_or_file, "write"):
        emit(path_or_file)
    else:
        with open(path_or_file, "w", newline="") as fh:
            emit(fh)


def run_bench(
    stats: StationaryStats,
    sizes,
    methods=METHODS,
    tols=(1e-6,),
    repeats: int = 1,
    lam: float = DEFAULT_LAMBDA,
    max_iterations: int = 1000,
    seed: int = 0,
    history_dir=None,
    max_dense_bytes: int = 2 * 1024**3,
) -> list[BenchRow]:
    """One row per (method, size, tol, repeat); each repeat starts from an empty cache."""
    methods = [canonical_method(mt) for mt in methods]
    if history_dir is not None:
        Path(history_dir).mkdir(parents=True, exist_ok=True)
    rows: list[BenchRow] = []
    for m, n in sizes:
        pos_mean = synthetic_rhs(stats, m, n, np.random.default_rng(seed))
        for method in methods:
            mem = memory_model(method, stats.k, m, n)
            if method == "cholesky" and mem > max_dense_bytes:
                log.warning("skipping cholesky at k=%d %dx%d: dense factor needs %d bytes", stats.k, m, n, mem)
                continue
            for tol in tols:
                for rep in range(repeats):
                    req = TrainRequest(stats, pos_mean, method, lam,
                                       SolveOptions(tol, max_iterations), diagnostics=False)
                    _, report = Trainer(TrainingCache()).train(req)
                    rows.append(BenchRow(method, stats.k, m, n, lam, tol, report.iterations,
                                         report.cold_time, report.warm_time, mem, report.residual, rep))
                    if history_dir is not None and method in ("cg", "pcg"):
                        name = f"{method}_k{stats.k}_{m}x{n}_tol{tol:g}_r{rep}.csv"
                        write_history_csv(report, Path(history_dir) / name)
    return rows


def robust_synthetic_stats(k: int, m: int, n: int, seed: int = 0, lam: float = DEFAULT_LAMBDA,
                           attempts: int = 5) -> tuple[StationaryStats, float]:
    """Draw SPD synthetic stats covering ``m x n``; raise ``lam`` on a non-PD draw.

    The covariance model is PD by construction, so escalation only triggers
    through round-off on extreme draws; it is kept as a guard.
    """
    rng = np.random.default_rng(seed)
    for _ in range(attempts):
        stats = synthetic_stats(k, m - 1, n - 1, rng)
        try:
            CirculantFactorization(project_from_toeplitz(stats, m, n, lam))
            return stats, lam
        except NotPositiveDefiniteError:
            log.warning("synthetic draw not positive definite at lambda=%g; retrying with %g", lam, lam * 10)
            lam *= 10
    raise TrainingError("could not draw positive definite synthetic statistics", "bench")


def median_times(rows, method: str) -> tuple[float, float]:
    sel = [r for r in rows if r.method == method]
    return statistics.median(r.cold_time for r in sel), statistics.median(r.warm_time for r in sel)
