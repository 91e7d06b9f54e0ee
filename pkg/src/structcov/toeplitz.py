"""Implicit block two-level Toeplitz covariance operator.

Under stationarity the ``kmn x kmn`` covariance of an ``m x n`` template is
fully described by the ``g`` slices for ``|du| < m``, ``|dv| < n``.  The
product ``S x`` is a sum over channel pairs of 2-D cross-correlations,
done here with FFTs on a grid padded to at least ``(2m-1) x (2n-1)``.
"""
from __future__ import annotations

import time

import numpy as np
from scipy import fft as sfft

from .layout import DENSE_GUARD, check_guard, check_template, dense_index
from .stats import StationaryStats, crop_stats

DEFAULT_LAMBDA = 1e-4
SYMMETRY_TOL = 1e-12


def symmetrize_slices(g: np.ndarray, tol: float = SYMMETRY_TOL) -> np.ndarray:
    """Check ``g_pq[du, dv] == g_qp[-du, -dv]`` and return the exactly symmetric average."""
    mirror = g.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]
    scale = max(1.0, float(np.max(np.abs(g))))
    err = float(np.max(np.abs(g - mirror)))
    if err > tol * scale:
        raise ValueError(f"covariance slices are not symmetric (max deviation {err:.3g})")
    return 0.5 * (g + mirror)


class ToeplitzOperator:
    """``x -> S x + lam * x`` for a block two-level Toeplitz ``S``.

    Only the ``k(k+1)/2`` slice transforms with ``p <= q`` are stored; the
    others follow from ``g_qp[d] = g_pq[-d]`` (a complex conjugate in the
    Fourier domain).
    """

    def __init__(self, g: np.ndarray, lam: float = DEFAULT_LAMBDA):
        g = np.asarray(g, dtype=np.float64)
        if g.ndim != 4 or g.shape[0] != g.shape[1] or g.shape[2] % 2 == 0 or g.shape[3] % 2 == 0:
            raise ValueError(f"g must have shape (k, k, 2m-1, 2n-1), got {g.shape}")
        if lam < 0:
            raise ValueError("lambda must be non-negative")
        t0 = time.perf_counter()
        self.g = symmetrize_slices(g)
        self.g.setflags(write=False)
        self.k = g.shape[0]
        self.m = g.shape[2] // 2 + 1
        self.n = g.shape[3] // 2 + 1
        self.lam = float(lam)
        self.fft_shape = (
            sfft.next_fast_len(2 * self.m - 1),
            sfft.next_fast_len(2 * self.n - 1),
        )
        P, Q = self.fft_shape
        k, m, n = self.k, self.m, self.n

        pairs = [(p, q) for p in range(k) for q in range(p, k)]
        self._pair_p = np.array([p for p, _ in pairs])
        self._pair_q = np.array([q for _, q in pairs])
        kernels = np.zeros((len(pairs), P, Q))
        rows = np.arange(-(m - 1), m) % P
        cols = np.arange(-(n - 1), n) % Q
        kernels[:, rows[:, None], cols[None, :]] = self.g[self._pair_p, self._pair_q]
        self._slices = sfft.rfft2(kernels)
        self._slices.setflags(write=False)
        # row p of the packed upper triangle is contiguous: [start[p], start[p] + k - p)
        self._start = np.concatenate([[0], np.cumsum(np.arange(k, 0, -1))[:-1]])
        self._lower = [np.flatnonzero((self._pair_q == p) & (self._pair_p < p)) for p in range(k)]
        self.setup_time = time.perf_counter() - t0

    @classmethod
    def from_stats(cls, s: StationaryStats, m: int, n: int, lam: float = DEFAULT_LAMBDA) -> "ToeplitzOperator":
        return cls(crop_stats(s, m, n).g, lam)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.k, self.m, self.n

    @property
    def dim(self) -> int:
        return self.k * self.m * self.n

    @property
    def nbytes(self) -> int:
        """Bytes held by the cached slice transforms."""
        return self._slices.nbytes

    def matvec(self, x: np.ndarray) -> np.ndarray:
        k, m, n = self.shape
        x = check_template(x, k, m, n)
        xh = sfft.rfft2(x, s=self.fft_shape)
        zh = np.empty_like(xh)
        for p in range(k):
            s0 = self._start[p]
            up = self._slices[s0:s0 + k - p]
            acc = np.einsum("tab,tab->ab", up.conj(), xh[p:])
            lo = self._lower[p]
            if lo.size:
                acc += np.einsum("tab,tab->ab", self._slices[lo], xh[self._pair_p[lo]])
            zh[p] = acc
        z = sfft.irfft2(zh, s=self.fft_shape)[:, :m, :n]
        if self.lam:
            z = z + self.lam * x
        return z

    __call__ = matvec

    def densify(self, guard: int = DENSE_GUARD) -> np.ndarray:
        """Dense ``kmn x kmn`` matrix in the layout of :mod:`structcov.layout`."""
        k, m, n = self.shape
        check_guard(k, m, n, guard)
        u, v, p = dense_index(k, m, n)
        du = u[None, :] - u[:, None] + (m - 1)
        dv = v[None, :] - v[:, None] + (n - 1)
        M = self.g[p[:, None], p[None, :], du, dv]
        M = np.triu(M) + np.triu(M, 1).T
        M[np.diag_indices_from(M)] += self.lam
        return M


def from_stats(s: StationaryStats, m: int, n: int, lam: float = DEFAULT_LAMBDA) -> ToeplitzOperator:
    return ToeplitzOperator.from_stats(s, m, n, lam)
