"""Block two-level circulant covariances and their closed-form solution.

A block two-level circulant ``C`` with defining array ``h[p, q, du, dv]``
(``du`` in ``[0, m)``, ``dv`` in ``[0, n)``) is block-diagonalised by the
per-channel 2-D DFT: at every frequency bin ``(a, b)`` the system reduces
to a ``k x k`` Hermitian block ``S_ab[p, q] = conj(hhat_pq[a, b])``.

Two ways to obtain ``h`` are provided: projecting a Toeplitz ``g`` onto the
nearest circulant in Frobenius norm, and accumulating sample windows in
the Fourier domain (the multi-channel correlation filter route).
Real-input transforms are used throughout, so only bins with
``b <= n // 2`` are stored.
"""
from __future__ import annotations

import time
from typing import Sequence

import numpy as np
from scipy import fft as sfft

from .errors import NotPositiveDefiniteError
from .layout import DENSE_GUARD, check_guard, check_template, dense_index
from .stats import FeatureImage, StationaryStats, crop_stats
from .toeplitz import DEFAULT_LAMBDA, SYMMETRY_TOL


class CirculantCovariance:
    """``x -> C x + lam * x`` with ``C`` block two-level circulant."""

    def __init__(self, h: np.ndarray, lam: float = DEFAULT_LAMBDA, blocks: np.ndarray | None = None):
        h = np.asarray(h, dtype=np.float64)
        if h.ndim != 4 or h.shape[0] != h.shape[1]:
            raise ValueError(f"h must have shape (k, k, m, n), got {h.shape}")
        if lam < 0:
            raise ValueError("lambda must be non-negative")
        k, _, m, n = h.shape
        mirror = np.roll(h.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1], (1, 1), axis=(2, 3))
        err = float(np.max(np.abs(h - mirror)))
        if err > SYMMETRY_TOL * max(1.0, float(np.max(np.abs(h)))):
            raise ValueError(f"circulant array is not Hermitian-consistent (max deviation {err:.3g})")
        self.h = h
        self.h.setflags(write=False)
        self.k, self.m, self.n = k, m, n
        self.lam = float(lam)
        self._blocks = blocks

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.k, self.m, self.n

    def fourier_blocks(self) -> np.ndarray:
        """Unregularised blocks, shape ``(m, n // 2 + 1, k, k)``."""
        if self._blocks is None:
            hh = sfft.rfft2(self.h)
            self._blocks = np.ascontiguousarray(np.conj(hh).transpose(2, 3, 0, 1))
            self._blocks.setflags(write=False)
        return self._blocks

    def matvec(self, x: np.ndarray) -> np.ndarray:
        k, m, n = self.shape
        x = check_template(x, k, m, n)
        xh = sfft.rfft2(x)
        zh = np.einsum("abpq,qab->pab", self.fourier_blocks(), xh)
        z = sfft.irfft2(zh, s=(m, n))
        if self.lam:
            z = z + self.lam * x
        return z

    __call__ = matvec

    def densify(self, guard: int = DENSE_GUARD) -> np.ndarray:
        k, m, n = self.shape
        check_guard(k, m, n, guard)
        u, v, p = dense_index(k, m, n)
        du = (u[None, :] - u[:, None]) % m
        dv = (v[None, :] - v[:, None]) % n
        M = self.h[p[:, None], p[None, :], du, dv].copy()
        M[np.diag_indices_from(M)] += self.lam
        return M

    def with_lambda(self, lam: float) -> "CirculantCovariance":
        return CirculantCovariance(self.h, lam, self._blocks)


def project_from_toeplitz(g, m: int, n: int, lam: float = DEFAULT_LAMBDA) -> CirculantCovariance:
    """Frobenius-nearest block two-level circulant to the Toeplitz matrix of ``g``.

    Each wrapped displacement mixes the two Toeplitz displacements it can
    come from along each axis, weighted by how often each is observed
    under periodic extension.
    """
    if isinstance(g, StationaryStats):
        g = crop_stats(g, m, n).g
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 4 or g.shape[2] < 2 * m - 1 or g.shape[3] < 2 * n - 1:
        raise ValueError(f"Toeplitz slices of shape {g.shape} do not cover a {m}x{n} template")
    ou, ov = g.shape[2] // 2, g.shape[3] // 2
    du = np.arange(m)
    dv = np.arange(n)
    alpha = (du / m)[:, None]
    beta = (dv / n)[None, :]
    near_u, far_u = du + ou, -((-du) % m) + ou
    near_v, far_v = dv + ov, -((-dv) % n) + ov

    def take(iu, iv):
        return g[:, :, iu[:, None], iv[None, :]]

    h = (
        (1 - alpha) * (1 - beta) * take(near_u, near_v)
        + (1 - alpha) * beta * take(near_u, far_v)
        + alpha * (1 - beta) * take(far_u, near_v)
        + alpha * beta * take(far_u, far_v)
    )
    return CirculantCovariance(h, lam)


def accumulate_from_windows(
    windows: Sequence, lam: float = DEFAULT_LAMBDA, normalize: bool = True
) -> CirculantCovariance:
    """Covariance of all circular shifts of ``windows``, built in the Fourier domain.

    With ``normalize`` the per-bin sums are divided by ``len(windows) * m * n``
    so that the result equals the mean outer product over every shift of
    every window.
    """
    if len(windows) == 0:
        raise ValueError("no windows")
    arrs = [w.values if isinstance(w, FeatureImage) else np.asarray(w, dtype=np.float64) for w in windows]
    arrs = [a[None] if a.ndim == 2 else a for a in arrs]
    shape = arrs[0].shape
    for i, a in enumerate(arrs):
        if a.shape != shape:
            raise ValueError(f"window {i} has shape {a.shape}, expected {shape}")
    k, m, n = shape
    xh = sfft.rfft2(np.stack(arrs))  # (N, k, m, n')
    blocks = np.einsum("xpab,xqab->abpq", xh, xh.conj())
    if normalize:
        blocks /= len(arrs) * m * n
    blocks = 0.5 * (blocks + blocks.conj().swapaxes(-1, -2))
    hh = np.conj(blocks).transpose(2, 3, 0, 1)
    h = sfft.irfft2(hh, s=(m, n))
    return CirculantCovariance(h, lam, blocks=blocks)


class CirculantFactorization:
    """Per-bin factors of ``S_ab + lam * I``.

    Only ``Linv = L^-1`` is kept, where ``L L^H`` is the Cholesky
    factorisation of the block: ``(S_ab + lam I)^-1 = Linv^H Linv``, so a
    solve is two small matrix-vector products per bin.
    """

    def __init__(self, C: CirculantCovariance):
        t0 = time.perf_counter()
        self.k, self.m, self.n = C.shape
        self.lam = C.lam
        blocks = C.fourier_blocks() + C.lam * np.eye(self.k)
        try:
            chol = np.linalg.cholesky(blocks)
        except np.linalg.LinAlgError:
            chol = None
        if chol is None or not np.all(np.isfinite(chol)):
            evs = np.linalg.eigvalsh(blocks)[..., 0]
            a, b = np.unravel_index(int(np.argmin(evs)), evs.shape)
            raise NotPositiveDefiniteError(
                f"Fourier block at bin ({a}, {b}) is not positive definite "
                f"(min eigenvalue {evs[a, b]:.3g}); increase lambda or check the statistics",
                (int(a), int(b)),
            )
        eye = np.broadcast_to(np.eye(self.k), blocks.shape)
        self.linv = np.tril(np.linalg.solve(chol, eye))
        self.linv.setflags(write=False)
        self.setup_time = time.perf_counter() - t0

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.k, self.m, self.n

    @property
    def nbytes(self) -> int:
        return self.linv.nbytes

    def blocks(self) -> np.ndarray:
        """Regularised blocks reconstructed from the factors."""
        chol = np.linalg.inv(self.linv)
        return chol @ np.conj(chol).swapaxes(-1, -2)

    def solve(self, b: np.ndarray) -> np.ndarray:
        k, m, n = self.shape
        b = check_template(b, k, m, n, "right-hand side")
        bh = sfft.rfft2(b)
        y = np.einsum("abpq,qab->abp", self.linv, bh)
        wh = np.einsum("abqp,abq->pab", np.conj(self.linv), y)
        return sfft.irfft2(wh, s=(m, n))

    __call__ = solve


def factorize(C: CirculantCovariance) -> CirculantFactorization:
    return CirculantFactorization(C)


def solve(F: CirculantFactorization, b: np.ndarray) -> np.ndarray:
    return F.solve(b)
