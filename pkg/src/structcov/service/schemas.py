"""Request and response models for the training service."""
from typing import Dict, List, Optional

from pydantic import BaseModel, Field


class Health(BaseModel):
    status: str = "ok"
    stats: int = 0
    detectors: int = 0
    cached: int = 0


class StatsInfo(BaseModel):
    id: str
    k: int
    dmax_u: int
    dmax_v: int
    max_template: List[int]
    centered: bool
    image_count: int
    pixel_count: int


class AccumulateRequest(BaseModel):
    images: List[List[List[List[float]]]] = Field(..., description="feature images, each (k, H, W)")
    dmax_u: int = Field(..., ge=0)
    dmax_v: int = Field(..., ge=0)
    centered: bool = True
    naive: bool = False


class TrainBody(BaseModel):
    stats_id: str
    positive_mean: List[List[List[float]]] = Field(..., description="(k, m, n) positive-class mean")
    method: str = "pcg"
    lam: float = Field(1e-4, ge=0)
    tol: float = Field(1e-6, gt=0)
    max_iter: int = Field(500, ge=1)
    threshold: Optional[float] = None
    metadata: Dict[str, str] = {}


class SolveSummary(BaseModel):
    method: str
    iterations: int
    residual: Optional[float]
    converged: bool
    cold_time: float
    warm_time: float
    history: List[float] = []
    history_times: List[float] = []


class DetectorInfo(BaseModel):
    id: str
    k: int
    m: int
    n: int
    threshold: float
    metadata: Dict[str, str]


class TrainResponse(BaseModel):
    detector: DetectorInfo
    report: SolveSummary


class DetectBody(BaseModel):
    detector_id: str
    image: List[List[List[float]]] = Field(..., description="feature image (k, H, W)")
    threshold: Optional[float] = None
    nms_iou: float = 0.3
    nms_cover: float = 0.6


class DetectionOut(BaseModel):
    u: int
    v: int
    m: int
    n: int
    score: float


class DetectResponse(BaseModel):
    detections: List[DetectionOut]
