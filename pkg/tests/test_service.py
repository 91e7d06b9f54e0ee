import numpy as np
import pytest
from fastapi.testclient import TestClient

from conftest import spd_stats
from structcov.service import ServiceClient, ServiceError, create_app
from structcov.service import client as client_mod
from structcov.stats import read_stats, stats_to_bytes
from structcov.trainer import Trainer, TrainRequest, detector_to_bytes, read_detector

OCTET = {"content-type": "application/octet-stream"}


@pytest.fixture
def app():
    return create_app()


@pytest.fixture
def http(app):
    return TestClient(app)


def test_health(http):
    assert http.get("/health").json() == {"status": "ok", "stats": 0, "detectors": 0, "cached": 0}


def test_stats_upload_and_download(http):
    s = spd_stats(2, 4, 5)
    info = http.post("/stats", content=stats_to_bytes(s), headers=OCTET).json()
    assert info["id"] == s.fingerprint() and info["k"] == 2 and info["max_template"] == [4, 5]
    assert http.get(f"/stats/{info['id']}").json() == info
    back = read_stats(http.get(f"/stats/{info['id']}/file").content)
    np.testing.assert_array_equal(back.g, s.g)
    assert http.post("/stats", content=b"junk", headers=OCTET).status_code == 422
    assert http.get("/stats/nope").status_code == 404


def test_accumulate_hand_example(http):
    r = http.post("/stats/accumulate", json={"images": [[[[1, 2, 3]]]], "dmax_u": 0, "dmax_v": 2})
    assert r.status_code == 200
    s = read_stats(http.get(f"/stats/{r.json()['id']}/file").content)
    assert s.at(0, 0, 0, 0) == pytest.approx(2 / 3)
    assert http.post("/stats/accumulate", json={"images": [], "dmax_u": 0, "dmax_v": 0}).status_code == 422


def test_train_matches_library_and_caches(http):
    s = spd_stats(3, 5, 6, seed=2)
    sid = http.post("/stats", content=stats_to_bytes(s), headers=OCTET).json()["id"]
    pos = s.mu[:, None, None] + np.random.default_rng(0).standard_normal((3, 5, 6))
    body = {"stats_id": sid, "positive_mean": pos.tolist(), "method": "pcg"}
    first = http.post("/train", json=body).json()
    second = http.post("/train", json=body).json()
    assert first["report"]["cold_time"] > 0 and second["report"]["cold_time"] == 0
    assert first["report"]["history"][0] == 1.0
    det = read_detector(http.get(f"/detectors/{first['detector']['id']}/file").content)
    ref, _ = Trainer().train(TrainRequest(s, pos, "pcg"))
    np.testing.assert_array_equal(det.weights, ref.weights)
    assert http.get("/health").json()["cached"] >= 2


def test_train_errors(http):
    s = spd_stats(1, 2, 2)
    sid = http.post("/stats", content=stats_to_bytes(s), headers=OCTET).json()["id"]
    assert http.post("/train", json={"stats_id": "x", "positive_mean": [[[1.0]]]}).status_code == 404
    r = http.post("/train", json={"stats_id": sid, "positive_mean": np.ones((1, 3, 3)).tolist()})
    assert r.status_code == 422 and "up to 2x2" in r.json()["detail"]
    r = http.post("/train", json={"stats_id": sid, "positive_mean": [[[1.0]]], "method": "svm"})
    assert r.status_code == 422


def test_detect_endpoint(http):
    w = np.random.default_rng(1).standard_normal((1, 3, 3))
    from structcov.trainer import DetectorTemplate

    det = DetectorTemplate(w, threshold=0.5 * float(np.sum(w**2)))
    did = http.post("/detectors", content=detector_to_bytes(det), headers=OCTET).json()["id"]
    img = np.zeros((1, 10, 10))
    img[:, 2:5, 6:9] = w
    out = http.post("/detect", json={"detector_id": did, "image": img.tolist()}).json()
    assert [(d["u"], d["v"]) for d in out["detections"]] == [(2, 6)]
    r = http.post("/detect", json={"detector_id": did, "image": np.zeros((2, 10, 10)).tolist()})
    assert r.status_code == 422


def test_client_against_app(app):
    c = ServiceClient(client=TestClient(app))
    s = spd_stats(2, 3, 3)
    sid = c.upload_stats(s)["id"]
    out = c.train(sid, s.mu[:, None, None] + 1.0, "circulant")
    det = c.detector(out["detector"]["id"])
    assert det.metadata["method"] == "circulant"
    with pytest.raises(ServiceError, match="404"):
        c.train("missing", np.ones((2, 3, 3)))


def test_cli_remote_training(app, tmp_path, monkeypatch):
    from structcov.cli import main
    from structcov.synthetic import write_corpus

    monkeypatch.setattr(client_mod.httpx, "Client", lambda base_url, timeout: TestClient(app))
    lay = write_corpus(tmp_path / "c", negatives=100, positives=10, test=1)
    stats = tmp_path / "s.stcv"
    assert main(["stats", str(lay.negatives), "--features", "hoglite", "--dmax-u", "7", "--dmax-v", "5",
                 "--out", str(stats)]) == 0
    local, remote = tmp_path / "l.dtec", tmp_path / "r.dtec"
    common = ["train", "--stats", str(stats), "--positives", str(lay.positives), "--size", "8x6",
              "--features", "hoglite"]
    assert main(common + ["--out", str(local)]) == 0
    assert main(common + ["--out", str(remote), "--server", "http://testserver"]) == 0
    a, b = read_detector(local), read_detector(remote)
    np.testing.assert_array_equal(a.weights, b.weights)
    assert a.threshold == b.threshold
