import struct
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from conftest import spd_stats
from structcov.errors import TrainingError
from structcov.layout import to_dense
from structcov.solvers import SolveOptions
from structcov.stats import StationaryStats
from structcov.trainer import (
    METHODS,
    DetectorTemplate,
    Trainer,
    TrainingCache,
    TrainRequest,
    build_rhs,
    calibrate_threshold,
    canonical_method,
    detector_to_bytes,
    read_detector,
    train,
    write_detector,
)


def delta_stats(k, m, n, mu=0.0):
    g = np.zeros((k, k, 2 * m - 1, 2 * n - 1))
    g[np.arange(k), np.arange(k), m - 1, n - 1] = 1.0
    return StationaryStats(g, np.full(k, mu))


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def test_build_rhs_examples(rng):
    s = delta_stats(2, 2, 2, mu=0.7)
    assert not np.any(build_rhs(np.full((2, 2, 2), 0.7), s))
    x = rng.standard_normal((2, 2, 2))
    np.testing.assert_array_equal(build_rhs(x, delta_stats(2, 2, 2)), x)
    one = StationaryStats(np.ones((1, 1, 1, 1)), np.array([2.0]))
    np.testing.assert_array_equal(build_rhs(np.full((1, 3, 3), 5.0), one), np.full((1, 3, 3), 3.0))
    with pytest.raises(ValueError):
        build_rhs(np.zeros((3, 2, 2)), s)


def test_method_names():
    assert canonical_method("chol") == "cholesky" and canonical_method("circ") == "circulant"
    with pytest.raises(ValueError):
        canonical_method("svm")


@pytest.mark.parametrize("method", METHODS)
def test_delta_stats_identity(method, rng):
    s = delta_stats(2, 3, 4)
    b = rng.standard_normal((2, 3, 4))
    det, rep = train(TrainRequest(s, b, method, lam=0))
    np.testing.assert_allclose(det.weights, b, atol=1e-12)
    assert det.metadata["method"] == method


def test_method_agreement():
    s = spd_stats(4, 6, 7, seed=3)
    pos = s.mu[:, None, None] + np.random.default_rng(0).standard_normal((4, 6, 7))
    w = {m: train(TrainRequest(s, pos, m))[0].weights
         for m in METHODS}
    assert rel(w["cg"], w["cholesky"]) <= 1e-5
    assert rel(w["pcg"], w["cholesky"]) <= 1e-5
    assert rel(w["circulant"], w["cholesky"]) > 1e-5


@pytest.mark.parametrize("method", METHODS)
def test_rhs_linearity(method):
    s = spd_stats(2, 4, 5, seed=1)
    rng = np.random.default_rng(2)
    b1, b2 = rng.standard_normal((2, 2, 4, 5))
    a, c = 1.7, -0.4
    opts = SolveOptions(1e-13, 2000)
    trainer = Trainer()

    def w(b):
        return trainer.train(TrainRequest(s, s.mu[:, None, None] + b, method, options=opts))[0].weights

    assert rel(w(a * b1 + c * b2), a * w(b1) + c * w(b2)) <= 1e-8


@pytest.mark.parametrize("method", METHODS)
def test_warm_start_economy(method):
    s = spd_stats(3, 6, 6, seed=4)
    pos = s.mu[:, None, None] + 1.0
    trainer = Trainer(TrainingCache())
    _, first = trainer.train(TrainRequest(s, pos, method))
    _, second = trainer.train(TrainRequest(s, pos + 0.5, method))
    assert first.cold_time > 0
    assert second.cold_time == 0.0
    assert len(trainer.cache) >= 1


@pytest.mark.parametrize("method", METHODS)
def test_determinism(method):
    s = spd_stats(3, 5, 4, seed=5)
    pos = s.mu[:, None, None] + np.random.default_rng(1).standard_normal((3, 5, 4))
    a = train(TrainRequest(s, pos, method))[0]
    b = train(TrainRequest(s, pos, method))[0]
    assert np.array_equal(a.weights, b.weights)


def test_circulant_reports_toeplitz_residual():
    s = spd_stats(2, 5, 5, seed=6)
    pos = s.mu[:, None, None] + 1.0
    det, rep = train(TrainRequest(s, pos, "circulant"))
    assert rep.extra["toeplitz_residual"] > 0
    assert rep.residual <= 1e-10
    assert float(det.metadata["toeplitz_residual"]) == rep.extra["toeplitz_residual"]


def test_errors():
    s = spd_stats(2, 3, 3)
    with pytest.raises(ValueError, match="nothing to discriminate"):
        train(TrainRequest(s, np.broadcast_to(s.mu[:, None, None], (2, 3, 3)).copy(), "pcg"))
    with pytest.raises(ValueError, match="up to 3x3"):
        TrainRequest(s, np.ones((2, 4, 3)))
    with pytest.raises(ValueError):
        TrainRequest(s, np.ones((3, 3, 3)))
    bad = StationaryStats(-np.ones((1, 1, 1, 1)), np.zeros(1))
    for method in METHODS:
        with pytest.raises(TrainingError) as info:
            train(TrainRequest(bad, np.ones((1, 1, 1)), method))
        assert info.value.method == method
        assert method in str(info.value)


def test_concurrent_training_shared_stats():
    s = spd_stats(3, 6, 6, seed=7)
    trainer = Trainer()
    rng = np.random.default_rng(0)
    pos = [s.mu[:, None, None] + rng.standard_normal((3, m, m)) for m in (4, 5, 6) for _ in range(3)]
    with ThreadPoolExecutor(4) as pool:
        out = list(pool.map(lambda p: trainer.train(TrainRequest(s, p, "pcg"))[0], pos))
    for p, det in zip(pos, out):
        ref = train(TrainRequest(s, p, "cholesky"))[0].weights
        assert rel(det.weights, ref) <= 1e-5


def test_calibrate_threshold():
    det = DetectorTemplate(np.ones((1, 1, 1)))
    assert calibrate_threshold(det, [1.0], [-1.0]) == 0.0
    assert det.metadata["threshold_rule"] == "midpoint"
    assert calibrate_threshold(det, [1.0, 3.0], [1.0, 3.0]) == 2.0
    base = calibrate_threshold(det, [0.5, 2.0], [-3.0, 0.0])
    assert calibrate_threshold(det, [5.5, 7.0], [2.0, 5.0]) == pytest.approx(base + 5)
    with pytest.raises(ValueError):
        calibrate_threshold(det, [], [1.0])


def test_detector_file(tmp_path, rng):
    w = rng.standard_normal((2, 3, 4))
    det = DetectorTemplate(w, 1.25, {"method": "pcg", "lambda": "0.0001"})
    data = detector_to_bytes(det)
    head = struct.unpack_from("<4sIIIId", data)
    assert head == (b"DTEC", 1, 2, 3, 4, 1.25)
    off = struct.calcsize("<4sIIIId")
    np.testing.assert_array_equal(np.frombuffer(data, "<f8", 24, off), to_dense(w))
    (mlen,) = struct.unpack_from("<I", data, off + 24 * 8)
    assert data[off + 24 * 8 + 4:].decode() == "method=pcg\nlambda=0.0001\n"
    assert mlen == len("method=pcg\nlambda=0.0001\n")
    path = tmp_path / "d.dtec"
    write_detector(det, path)
    back = read_detector(path)
    np.testing.assert_array_equal(back.weights, w)
    assert back.threshold == 1.25 and back.metadata == det.metadata
    with pytest.raises(ValueError, match="magic"):
        read_detector(b"XXXX" + data[4:])
    with pytest.raises(ValueError):
        read_detector(data[:-3])


def test_template_validation():
    with pytest.raises(ValueError):
        DetectorTemplate(np.ones((2, 2)))
    with pytest.raises(ValueError):
        DetectorTemplate(np.full((1, 1, 1), np.nan))


def test_metadata_contents():
    s = spd_stats(2, 3, 3)
    det, rep = train(TrainRequest(s, s.mu[:, None, None] + 1, "cg", 1e-3, SolveOptions(1e-7)))
    md = det.metadata
    assert md["method"] == "cg" and float(md["lambda"]) == 1e-3 and float(md["tol"]) == 1e-7
    assert int(md["iterations"]) == rep.iterations and md["stats"] == s.fingerprint()
    assert "created" in md
