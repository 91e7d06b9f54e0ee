"""HTTP front-end: register statistics once, train many detectors against them.

All trainers share one :class:`TrainingCache`, so detectors of a size
already seen skip the cold set-up.  Statistics and detectors travel as
STCV / DTEC bytes (``application/octet-stream``) or as JSON summaries.
"""
import math
import threading

import numpy as np
from fastapi import FastAPI, HTTPException, Request, Response

from ..detect import detect
from ..errors import TrainingError
from ..solvers import SolveOptions
from ..stats import FeatureImage, StationaryAccumulator, finalize, read_stats, stats_to_bytes
from ..trainer import (
    DetectorTemplate,
    Trainer,
    TrainingCache,
    TrainRequest,
    detector_to_bytes,
    read_detector,
)
from .schemas import (
    AccumulateRequest,
    DetectBody,
    DetectionOut,
    DetectorInfo,
    DetectResponse,
    Health,
    SolveSummary,
    StatsInfo,
    TrainBody,
    TrainResponse,
)

OCTET = "application/octet-stream"


class Registry:
    def __init__(self):
        self.stats = {}
        self.detectors = {}
        self.trainer = Trainer(TrainingCache())
        self._lock = threading.Lock()
        self._next = 0

    def add_detector(self, det: DetectorTemplate) -> str:
        with self._lock:
            self._next += 1
            key = f"d{self._next:06d}"
            self.detectors[key] = det
        return key

    def add_stats(self, stats) -> str:
        key = stats.fingerprint()
        with self._lock:
            self.stats[key] = stats
        return key


def _stats_info(key, s) -> StatsInfo:
    return StatsInfo(id=key, k=s.k, dmax_u=s.dmax_u, dmax_v=s.dmax_v, max_template=list(s.max_template),
                     centered=s.centered, image_count=s.image_count, pixel_count=s.pixel_count)


def _detector_info(key, det: DetectorTemplate) -> DetectorInfo:
    return DetectorInfo(id=key, k=det.k, m=det.m, n=det.n, threshold=det.threshold, metadata=det.metadata)


def _finite(x: float):
    return x if math.isfinite(x) else None


def create_app(registry: Registry = None) -> FastAPI:
    reg = registry or Registry()
    app = FastAPI(title="structcov", version="0.1.0")
    app.state.registry = reg

    def get_stats(key):
        if key not in reg.stats:
            raise HTTPException(404, f"unknown stats id {key!r}")
        return reg.stats[key]

    def get_detector(key):
        if key not in reg.detectors:
            raise HTTPException(404, f"unknown detector id {key!r}")
        return reg.detectors[key]

    @app.get("/health", response_model=Health)
    def health():
        return Health(stats=len(reg.stats), detectors=len(reg.detectors), cached=len(reg.trainer.cache))

    @app.post("/stats", response_model=StatsInfo)
    async def upload_stats(request: Request):
        try:
            s = read_stats(await request.body())
        except ValueError as exc:
            raise HTTPException(422, str(exc))
        return _stats_info(reg.add_stats(s), s)

    @app.post("/stats/accumulate", response_model=StatsInfo)
    def accumulate(body: AccumulateRequest):
        if not body.images:
            raise HTTPException(422, "no images")
        try:
            imgs = [FeatureImage(np.asarray(a, dtype=np.float64)) for a in body.images]
            acc = StationaryAccumulator(imgs[0].k, body.dmax_u, body.dmax_v)
            acc.add_many(imgs, "naive" if body.naive else "fft")
            s = finalize(acc, centered=body.centered)
        except ValueError as exc:
            raise HTTPException(422, str(exc))
        return _stats_info(reg.add_stats(s), s)

    @app.get("/stats/{key}", response_model=StatsInfo)
    def stats_info(key: str):
        return _stats_info(key, get_stats(key))

    @app.get("/stats/{key}/file")
    def stats_file(key: str):
        return Response(stats_to_bytes(get_stats(key)), media_type=OCTET)

    @app.post("/train", response_model=TrainResponse)
    def train(body: TrainBody):
        stats = get_stats(body.stats_id)
        try:
            req = TrainRequest(stats, np.asarray(body.positive_mean, dtype=np.float64), body.method, body.lam,
                               SolveOptions(body.tol, body.max_iter))
            det, report = reg.trainer.train(req)
        except TrainingError as exc:
            raise HTTPException(422, str(exc))
        except ValueError as exc:
            raise HTTPException(422, str(exc))
        det.metadata.update(body.metadata)
        if body.threshold is not None:
            det.threshold = body.threshold
        key = reg.add_detector(det)
        summary = SolveSummary(method=report.method, iterations=report.iterations,
                               residual=_finite(report.residual), converged=report.converged,
                               cold_time=report.cold_time, warm_time=report.warm_time,
                               history=report.history, history_times=report.history_times)
        return TrainResponse(detector=_detector_info(key, det), report=summary)

    @app.post("/detectors", response_model=DetectorInfo)
    async def upload_detector(request: Request):
        try:
            det = read_detector(await request.body())
        except ValueError as exc:
            raise HTTPException(422, str(exc))
        return _detector_info(reg.add_detector(det), det)

    @app.get("/detectors/{key}", response_model=DetectorInfo)
    def detector_info(key: str):
        return _detector_info(key, get_detector(key))

    @app.get("/detectors/{key}/file")
    def detector_file(key: str):
        return Response(detector_to_bytes(get_detector(key)), media_type=OCTET)

    @app.post("/detect", response_model=DetectResponse)
    def run_detect(body: DetectBody):
        det = get_detector(body.detector_id)
        try:
            f = FeatureImage(np.asarray(body.image, dtype=np.float64))
            dets = detect(det, f, body.threshold, body.nms_iou, body.nms_cover)
        except ValueError as exc:
            raise HTTPException(422, str(exc))
        return DetectResponse(detections=[DetectionOut(u=d.u, v=d.v, m=d.m, n=d.n, score=d.score) for d in dets])

    return app


app = create_app()
