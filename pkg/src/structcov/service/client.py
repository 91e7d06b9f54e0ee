"""Thin HTTP client for the training service."""
import httpx
import numpy as np

from ..stats import StationaryStats, stats_to_bytes
from ..trainer import DetectorTemplate, read_detector

OCTET = {"content-type": "application/octet-stream"}


class ServiceError(RuntimeError):
    pass


class ServiceClient:
    def __init__(self, base_url: str = "http://127.0.0.1:8000", client: httpx.Client = None, timeout: float = 600.0):
        self.http = client if client is not None else httpx.Client(base_url=base_url, timeout=timeout)

    def _check(self, r: httpx.Response) -> httpx.Response:
        if r.status_code >= 400:
            try:
                detail = r.json().get("detail", r.text)
            except ValueError:
                detail = r.text
            raise ServiceError(f"{r.request.method} {r.request.url.path}: {r.status_code} {detail}")
        return r

    def health(self) -> dict:
        return self._check(self.http.get("/health")).json()

    def upload_stats(self, stats: StationaryStats) -> dict:
        return self._check(self.http.post("/stats", content=stats_to_bytes(stats), headers=OCTET)).json()

    def train(self, stats_id: str, pos_mean: np.ndarray, method: str = "pcg", lam: float = 1e-4,
              tol: float = 1e-6, max_iter: int = 500, threshold=None, metadata=None) -> dict:
        body = {
            "stats_id": stats_id,
            "positive_mean": np.asarray(pos_mean, dtype=np.float64).tolist(),
            "method": method,
            "lam": lam,
            "tol": tol,
            "max_iter": max_iter,
            "threshold": threshold,
            "metadata": metadata or {},
        }
        return self._check(self.http.post("/train", json=body)).json()

    def detector(self, detector_id: str) -> DetectorTemplate:
        return read_detector(self._check(self.http.get(f"/detectors/{detector_id}/file")).content)

    def close(self) -> None:
        self.http.close()
