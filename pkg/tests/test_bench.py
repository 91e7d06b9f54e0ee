import io

import numpy as np
import pytest

from conftest import spd_stats
from structcov.bench import memory_model, parse_size, run_bench, write_rows_csv
from structcov.circulant import CirculantFactorization, project_from_toeplitz
from structcov.toeplitz import ToeplitzOperator


@pytest.mark.parametrize("k,m,n", [(1, 1, 1), (2, 3, 5), (3, 4, 7), (4, 6, 6)])
def test_memory_model_matches_storage(k, m, n):
    stats = spd_stats(k, m, n, seed=k + m + n)
    T = ToeplitzOperator.from_stats(stats, m, n, 1e-3)
    F = CirculantFactorization(project_from_toeplitz(stats, m, n, 1e-3))
    assert memory_model("cg", k, m, n) == T.nbytes
    assert memory_model("circulant", k, m, n) == F.nbytes
    assert memory_model("pcg", k, m, n) == T.nbytes + F.nbytes
    assert memory_model("cholesky", k, m, n) == 8 * (k * m * n) ** 2


def test_dense_to_pcg_ratio_at_large_template():
    assert memory_model("cholesky", 31, 12, 28) / memory_model("pcg", 31, 12, 28) >= 100


@pytest.mark.parametrize("text", ["12", "0x4", "ax3", "3x-1"])
def test_parse_size_rejects(text):
    with pytest.raises(ValueError):
        parse_size(text)


def test_parse_size():
    assert parse_size("12x28") == (12, 28)
    assert parse_size("5X3") == (5, 3)


def test_run_bench_rows_and_csv(tmp_path):
    stats = spd_stats(2, 4, 5, seed=3)
    rows = run_bench(stats, [(3, 4), (4, 5)], ("chol", "cg", "pcg", "circ"), (1e-6, 1e-3), repeats=2,
                     lam=1e-3, history_dir=tmp_path)
    assert len(rows) == 2 * 4 * 2 * 2
    assert {r.method for r in rows} == {"cholesky", "cg", "pcg", "circulant"}
    assert all(r.cold_time >= 0 and r.warm_time >= 0 for r in rows)
    assert all(r.iterations >= 1 for r in rows if r.method in ("cg", "pcg"))
    assert len(list(tmp_path.glob("*.csv"))) == 2 * 2 * 2 * 2
    buf = io.StringIO()
    write_rows_csv(rows, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0].startswith("method,k,m,n,lam,tol")
    assert len(lines) == len(rows) + 1


def test_run_bench_skips_oversized_dense():
    stats = spd_stats(2, 4, 5, seed=4)
    rows = run_bench(stats, [(4, 5)], ("chol", "pcg"), lam=1e-3, max_dense_bytes=100)
    assert [r.method for r in rows] == ["pcg"]


def test_bench_iterative_residuals_meet_tolerance():
    stats = spd_stats(3, 5, 6, seed=5)
    rows = run_bench(stats, [(5, 6)], ("cg", "pcg"), (1e-8,), lam=1e-3)
    assert all(np.isfinite(r.residual) and r.residual <= 1e-8 for r in rows)
