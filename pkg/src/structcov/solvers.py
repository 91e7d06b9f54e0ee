"""Conjugate gradient, preconditioned CG and a dense Cholesky baseline.

Operators are plain callables ``x -> A x`` on arrays of any fixed shape
(template-shaped ``(k, m, n)`` arrays in practice); a dense matrix is
accepted and applied to flattened vectors.  Every solver returns a
:class:`SolveReport` whose residuals are ``||A w - b|| / ||b||``.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import lapack

from .errors import NotPositiveDefiniteError

# explicit residual refresh period, bounds drift of the recurrence residual
REFRESH_EVERY = 50


@dataclass(frozen=True)
class SolveOptions:
    tolerance: float = 1e-6
    max_iterations: int = 500
    record_history: bool = True

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


@dataclass
class SolveReport:
    solution: np.ndarray
    iterations: int
    residual: float
    converged: bool
    method: str = ""
    history: list[float] = field(default_factory=list)
    history_times: list[float] = field(default_factory=list)
    cold_time: float = 0.0
    warm_time: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def total_time(self) -> float:
        return self.cold_time + self.warm_time

    def summary(self) -> str:
        return (
            f"{self.method}: iterations={self.iterations} residual={self.residual:.3e} "
            f"converged={self.converged} cold={self.cold_time:.4f}s warm={self.warm_time:.4f}s"
        )


def _as_operator(A) -> Callable[[np.ndarray], np.ndarray]:
    if callable(A):
        return A
    M = np.asarray(A, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"dense operator must be square, got shape {M.shape}")
    return lambda x: (M @ x.reshape(-1)).reshape(x.shape)


def _dot(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.vdot(a, b).real)


def _krylov(A, b, M, opts: SolveOptions, callback, method: str) -> SolveReport:
    opts = opts or SolveOptions()
    A = _as_operator(A)
    M = None if M is None else _as_operator(M)
    b = np.asarray(b, dtype=np.float64)
    if not np.all(np.isfinite(b)):
        raise ValueError("right-hand side contains non-finite values")
    t0 = time.perf_counter()
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return SolveReport(np.zeros_like(b), 0, 0.0, True, method, [0.0], [0.0])

    w = np.zeros_like(b)
    r = b.copy()
    z = r if M is None else M(r)
    rz = _dot(r, z)
    if M is not None and not rz > 0:
        raise NotPositiveDefiniteError("preconditioner is not positive definite", 0)
    d = np.array(z, copy=True)
    history, times = [1.0], [0.0]
    residual, it, converged = 1.0, 0, False

    while it < opts.max_iterations:
        it += 1
        Ad = A(d)
        curv = _dot(d, Ad)
        if not np.isfinite(curv):
            raise FloatingPointError(f"{method}: non-finite values at iteration {it}")
        if curv <= 0:
            raise NotPositiveDefiniteError(
                f"{method}: non-positive curvature {curv:.3g} at iteration {it}; operator is not "
                "positive definite (lambda too small, too few negative images, or corrupt statistics)",
                it,
            )
        alpha = rz / curv
        w += alpha * d
        if it % REFRESH_EVERY == 0:
            r = b - A(w)
        else:
            r -= alpha * Ad
        residual = float(np.linalg.norm(r)) / bnorm
        if not np.isfinite(residual):
            raise FloatingPointError(f"{method}: non-finite residual at iteration {it}")
        if opts.record_history:
            history.append(residual)
            times.append(time.perf_counter() - t0)
        if callback is not None:
            callback(w)
        if residual <= opts.tolerance:
            converged = True
            break
        z = r if M is None else M(r)
        rz_new = _dot(r, z)
        if M is not None and not rz_new > 0:
            raise NotPositiveDefiniteError(f"{method}: preconditioner is not positive definite", it)
        d = z + (rz_new / rz) * d
        rz = rz_new

    if not opts.record_history:
        history, times = [], []
    return SolveReport(
        solution=w,
        iterations=it,
        residual=residual,
        converged=converged,
        method=method,
        history=history,
        history_times=times,
        warm_time=time.perf_counter() - t0,
    )


def cg(A, b: np.ndarray, opts: SolveOptions | None = None, callback=None) -> SolveReport:
    """Conjugate gradient from ``w0 = 0``."""
    return _krylov(A, b, None, opts, callback, "cg")


def pcg(A, M, b: np.ndarray, opts: SolveOptions | None = None, callback=None) -> SolveReport:
    """Preconditioned CG; ``M`` applies an SPD approximation of ``A^-1``.

    The reported residual is the unpreconditioned ``||A w - b|| / ||b||``.
    """
    return _krylov(A, b, M, opts, callback, "pcg")


class DenseCholesky:
    """Upper Cholesky factor of a dense SPD matrix, kept for repeated solves."""

    def __init__(self, A: np.ndarray):
        A = np.asarray(A, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"matrix must be square, got shape {A.shape}")
        t0 = time.perf_counter()
        c, info = lapack.dpotrf(A, lower=False, clean=True, overwrite_a=False)
        if info > 0:
            raise NotPositiveDefiniteError(
                f"matrix is not positive definite: leading minor of order {info} fails (pivot {info - 1})",
                int(info) - 1,
            )
        if info < 0:
            raise ValueError(f"dpotrf: illegal argument {-info}")
        self.factor = c
        self.setup_time = time.perf_counter() - t0

    @property
    def nbytes(self) -> int:
        return self.factor.nbytes

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=np.float64)
        x, info = lapack.dpotrs(self.factor, b.reshape(-1), lower=False)
        if info != 0:
            raise ValueError(f"dpotrs failed with info={info}")
        return x.reshape(b.shape)


def dense_cholesky_solve(A, b: np.ndarray, factor: DenseCholesky | None = None) -> SolveReport:
    """Direct solve; cold time is the factorisation, warm time the triangular solves."""
    cold = 0.0
    if factor is None:
        factor = DenseCholesky(A)
        cold = factor.setup_time
    b = np.asarray(b, dtype=np.float64)
    t0 = time.perf_counter()
    w = factor.solve(b)
    warm = time.perf_counter() - t0
    bnorm = float(np.linalg.norm(b))
    residual = 0.0
    if bnorm > 0 and A is not None:
        r = b.reshape(-1) - np.asarray(A) @ w.reshape(-1)
        residual = float(np.linalg.norm(r)) / bnorm
    return SolveReport(w, 1, residual, True, "cholesky", [1.0, residual], [0.0, warm], cold_time=cold, warm_time=warm)


def write_history_csv(report: SolveReport, path) -> None:
    """Rows ``iteration,residual,warm_time`` with a header."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["iteration", "residual", "warm_time"])
        for i, (res, t) in enumerate(zip(report.history, report.history_times)):
            out.writerow([i, repr(float(res)), repr(float(t))])
