import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_g
from structcov.features import identity_transform
from structcov.layout import dense_index, from_dense, to_dense
from structcov.stats import StationaryAccumulator, StationaryStats, finalize
from structcov.synthetic import texture
from structcov.toeplitz import DEFAULT_LAMBDA, ToeplitzOperator, from_stats


def dense_oracle(g, lam):
    """Entry-by-entry matrix S[(u,v,p),(i,j,q)] = g_pq[i-u, j-v] + lam [same index]."""
    k, _, a, b = g.shape
    m, n = a // 2 + 1, b // 2 + 1
    u, v, p = dense_index(k, m, n)
    M = np.empty((k * m * n, k * m * n))
    for r in range(M.shape[0]):
        for c in range(M.shape[1]):
            M[r, c] = g[p[r], p[c], u[c] - u[r] + m - 1, v[c] - v[r] + n - 1]
    return M + lam * np.eye(M.shape[0])


def delta_g(k, m, n):
    g = np.zeros((k, k, 2 * m - 1, 2 * n - 1))
    g[np.arange(k), np.arange(k), m - 1, n - 1] = 1.0
    return g


def test_default_lambda():
    assert DEFAULT_LAMBDA == 1e-4


def test_two_by_two_matvec():
    T = ToeplitzOperator(np.array([1.0, 2.0, 1.0]).reshape(1, 1, 1, 3), lam=0)
    np.testing.assert_allclose(T(np.array([[[1.0, 0.0]]])), [[[2.0, 1.0]]], atol=1e-14)


def test_densify_hand_example():
    g = np.array([0.5, 1.0, 2.0, 1.0, 0.5]).reshape(1, 1, 1, 5)
    M = ToeplitzOperator(g, lam=0).densify()
    np.testing.assert_array_equal(M, [[2, 1, 0.5], [1, 2, 1], [0.5, 1, 2]])


def test_delta_is_identity(rng):
    T = ToeplitzOperator(delta_g(2, 3, 4), lam=0)
    x = rng.standard_normal((2, 3, 4))
    np.testing.assert_allclose(T(x), x, atol=1e-14)
    lam = 0.25
    np.testing.assert_array_equal(ToeplitzOperator(delta_g(2, 3, 4), lam).densify(), (1 + lam) * np.eye(24))


def test_single_pixel_template(rng):
    g = random_g(rng, 3, 1, 1)
    T = ToeplitzOperator(g, lam=0.5)
    x = rng.standard_normal((3, 1, 1))
    np.testing.assert_allclose(T(x)[:, 0, 0], (g[:, :, 0, 0] + 0.5 * np.eye(3)) @ x[:, 0, 0], rtol=1e-12)


def test_dense_layout_order():
    x = np.arange(2 * 3 * 4, dtype=float).reshape(2, 3, 4)
    vec = to_dense(x)
    for p in range(2):
        for u in range(3):
            for v in range(4):
                assert vec[(v * 3 + u) * 2 + p] == x[p, u, v]
    np.testing.assert_array_equal(from_dense(vec, 2, 3, 4), x)


def test_densify_matches_entry_oracle(rng):
    g = random_g(rng, 2, 3, 2)
    np.testing.assert_array_equal(ToeplitzOperator(g, 0.1).densify(), dense_oracle(g, 0.1))


def test_guard_and_extent_errors(rng):
    T = ToeplitzOperator(random_g(rng, 2, 3, 3), 0)
    with pytest.raises(ValueError, match="guard"):
        T.densify(guard=10)
    s = StationaryStats(random_g(rng, 1, 2, 2), np.zeros(1))
    with pytest.raises(ValueError, match="up to 2x2"):
        from_stats(s, 3, 2)
    with pytest.raises(ValueError):
        T(np.zeros((2, 3, 2)))


def test_asymmetric_slices_rejected(rng):
    g = rng.standard_normal((2, 2, 3, 3))
    with pytest.raises(ValueError, match="symmetr"):
        ToeplitzOperator(g)


instances = st.tuples(st.integers(1, 3), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))


@settings(max_examples=60, deadline=None)
@given(instances)
def test_matvec_matches_dense(inst):
    k, m, n, seed = inst
    rng = np.random.default_rng(seed)
    T = ToeplitzOperator(random_g(rng, k, m, n), lam=rng.uniform(0, 1))
    x = rng.standard_normal((k, m, n))
    M = T.densify()
    assert np.array_equal(M, M.T)
    ref = M @ to_dense(x)
    assert np.linalg.norm(to_dense(T(x)) - ref) <= 1e-10 * np.linalg.norm(ref)


@settings(max_examples=40, deadline=None)
@given(instances)
def test_linear_and_symmetric(inst):
    k, m, n, seed = inst
    rng = np.random.default_rng(seed)
    T = ToeplitzOperator(random_g(rng, k, m, n), lam=0.1)
    x, y = rng.standard_normal((2, k, m, n))
    a, b = rng.standard_normal(2)
    lhs, rhs = T(a * x + b * y), a * T(x) + b * T(y)
    assert np.linalg.norm(lhs - rhs) <= 1e-12 * max(np.linalg.norm(rhs), 1e-300) + 1e-13
    xy, yx = np.vdot(T(x), y), np.vdot(x, T(y))
    assert abs(xy - yx) <= 1e-10 * max(abs(xy), np.linalg.norm(T(x)) * np.linalg.norm(y))


@pytest.fixture(scope="module")
def texture_stats():
    rng = np.random.default_rng(7)
    acc = StationaryAccumulator(1, 5, 5)
    for _ in range(10):
        acc.add(identity_transform(texture(rng, 128, 128)))
    return finalize(acc)


def test_positive_definite_on_image_stats(texture_stats):
    lam = 1e-4
    T = from_stats(texture_stats, 6, 6, lam)
    rng = np.random.default_rng(1)
    for _ in range(50):
        x = rng.standard_normal((1, 6, 6))
        assert np.vdot(x, T(x)) >= lam * np.vdot(x, x) - 1e-10
