"""Dense vectorisation of ``(k, m, n)`` templates.

Dense vectors and matrices index element ``(u, v, p)`` as
``(v * m + u) * k + p``: channel fastest, then row, then column, so each
pixel's ``k`` channels are contiguous.
"""
from __future__ import annotations

import numpy as np

DENSE_GUARD = 20_000


def to_dense(x: np.ndarray) -> np.ndarray:
    """``(k, m, n)`` template -> length ``k*m*n`` vector."""
    return np.ascontiguousarray(np.asarray(x).transpose(2, 1, 0)).reshape(-1)


def from_dense(vec: np.ndarray, k: int, m: int, n: int) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(vec).reshape(n, m, k).transpose(2, 1, 0))


def dense_index(k: int, m: int, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per dense position, the ``(u, v, p)`` it refers to."""
    v, u, p = np.meshgrid(np.arange(n), np.arange(m), np.arange(k), indexing="ij")
    return u.reshape(-1), v.reshape(-1), p.reshape(-1)


def check_guard(k: int, m: int, n: int, guard: int = DENSE_GUARD) -> None:
    if k * m * n > guard:
        raise ValueError(f"dense size {k * m * n} exceeds guard {guard}")


def check_template(x: np.ndarray, k: int, m: int, n: int, what: str = "vector") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (k, m, n):
        raise ValueError(f"{what} has shape {x.shape}, expected {(k, m, n)}")
    return x
