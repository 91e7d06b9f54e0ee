"""Fast LDA detector training from stationary image statistics.

Negative-class covariances are never formed from explicit windows: a
single pass over a corpus gathers relative-displacement statistics, from
which block Toeplitz (exact) or block circulant (approximate) covariance
operators are built for any template size.
"""
__version__ = "0.1.0"

from .circulant import CirculantCovariance, CirculantFactorization, accumulate_from_windows, project_from_toeplitz
from .detect import Detection, detect, match_detections, nms_greedy, score_image
from .errors import NotPositiveDefiniteError, TrainingError
from .features import FeatureTransform, hoglite_transform, identity_transform
from .solvers import SolveOptions, SolveReport, cg, dense_cholesky_solve, pcg
from .stats import (
    FeatureImage,
    StationaryAccumulator,
    StationaryStats,
    crop_stats,
    finalize,
    merge,
    positive_mean,
    read_stats,
    write_stats,
)
from .toeplitz import ToeplitzOperator
from .trainer import DetectorTemplate, Trainer, TrainingCache, TrainRequest, read_detector, train, write_detector

__all__ = [
    "CirculantCovariance",
    "CirculantFactorization",
    "Detection",
    "DetectorTemplate",
    "FeatureImage",
    "FeatureTransform",
    "NotPositiveDefiniteError",
    "SolveOptions",
    "SolveReport",
    "StationaryAccumulator",
    "StationaryStats",
    "ToeplitzOperator",
    "TrainRequest",
    "Trainer",
    "TrainingCache",
    "TrainingError",
    "accumulate_from_windows",
    "cg",
    "crop_stats",
    "dense_cholesky_solve",
    "detect",
    "finalize",
    "hoglite_transform",
    "identity_transform",
    "match_detections",
    "merge",
    "nms_greedy",
    "pcg",
    "positive_mean",
    "project_from_toeplitz",
    "read_detector",
    "read_stats",
    "score_image",
    "train",
    "write_detector",
    "write_stats",
]
