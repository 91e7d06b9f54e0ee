"""Single-scale sliding-window scoring, greedy NMS and greedy matching.

Rectangles live on the feature grid: top-left ``(u, v)`` (row, column) and
extent ``(m, n)``.  Score ties are broken by ``(u, v)`` ascending, then by
extent, so that every greedy pass is reproducible bit for bit.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import fft as sfft

from .stats import FeatureImage
from .trainer import DetectorTemplate

NMS_IOU = 0.3
NMS_COVER = 0.6
MATCH_IOU = 0.5


@dataclass(frozen=True)
class Detection:
    u: int
    v: int
    m: int
    n: int
    score: float = 0.0

    @property
    def area(self) -> int:
        return self.m * self.n

    def order_key(self):
        return (-self.score, self.u, self.v, self.m, self.n)


def intersection(a: Detection, b: Detection) -> int:
    du = min(a.u + a.m, b.u + b.m) - max(a.u, b.u)
    dv = min(a.v + a.n, b.v + b.n) - max(a.v, b.v)
    return max(du, 0) * max(dv, 0)


def iou(a: Detection, b: Detection) -> float:
    inter = intersection(a, b)
    return inter / (a.area + b.area - inter)


def _weights(det) -> np.ndarray:
    return det.weights if isinstance(det, DetectorTemplate) else np.asarray(det, dtype=np.float64)


def _image(f) -> np.ndarray:
    return f.values if isinstance(f, FeatureImage) else np.asarray(f, dtype=np.float64)


def _check(w: np.ndarray, f: np.ndarray) -> None:
    if w.shape[0] != f.shape[0]:
        raise ValueError(f"detector has {w.shape[0]} channels, image has {f.shape[0]}")
    if f.shape[1] < w.shape[1] or f.shape[2] < w.shape[2]:
        raise ValueError(f"image extent {f.shape[1:]} is smaller than template extent {w.shape[1:]}")


def score_image(det, f) -> np.ndarray:
    """``score[u, v] = sum_p sum_ij w_p[i, j] f_p[u + i, v + j]`` over windows fully inside ``f``."""
    w, x = _weights(det), _image(f)
    _check(w, x)
    _, m, n = w.shape
    _, h, wd = x.shape
    shape = (sfft.next_fast_len(h, real=True), sfft.next_fast_len(wd, real=True))
    spec = np.einsum("pab,pab->ab", np.conj(sfft.rfft2(w, s=shape)), sfft.rfft2(x, s=shape))
    return sfft.irfft2(spec, s=shape)[: h - m + 1, : wd - n + 1]


def score_image_direct(det, f) -> np.ndarray:
    w, x = _weights(det), _image(f)
    _check(w, x)
    _, m, n = w.shape
    _, h, wd = x.shape
    out = np.zeros((h - m + 1, wd - n + 1))
    for u in range(h - m + 1):
        for v in range(wd - n + 1):
            out[u, v] = np.sum(w * x[:, u:u + m, v:v + n])
    return out


def candidates(scores: np.ndarray, m: int, n: int, threshold: float = -np.inf) -> list[Detection]:
    """Every placement scoring at least ``threshold``."""
    us, vs = np.nonzero(scores >= threshold)
    return [Detection(int(u), int(v), m, n, float(scores[u, v])) for u, v in zip(us, vs)]


def _local_maxima(dets: Sequence[Detection]) -> list[Detection]:
    best: dict[tuple, float] = {}
    for d in dets:
        key = (d.u, d.v, d.m, d.n)
        best[key] = max(best.get(key, -np.inf), d.score)
    keep = []
    for d in dets:
        neighbours = ((d.u - 1, d.v), (d.u + 1, d.v), (d.u, d.v - 1), (d.u, d.v + 1))
        if all(best.get((u, v, d.m, d.n), -np.inf) <= d.score for u, v in neighbours):
            keep.append(d)
    return keep


def nms_greedy(
    dets: Iterable[Detection],
    iou_threshold: float = NMS_IOU,
    cover_threshold: float = NMS_COVER,
    local_max: bool = True,
) -> list[Detection]:
    """Keep the best remaining detection, suppress what it covers or overlaps.

    A candidate ``B`` is suppressed by a kept ``A`` when
    ``|A & B| / |B| > cover_threshold`` or ``IoU(A, B) > iou_threshold``.
    With ``local_max`` only placements not beaten by a four-connected
    neighbour of the same extent are considered.
    """
    dets = list(dets)
    if local_max:
        dets = _local_maxima(dets)
    remaining = sorted(dets, key=Detection.order_key)
    kept: list[Detection] = []
    for cand in remaining:
        suppressed = False
        for a in kept:
            inter = intersection(a, cand)
            if inter == 0:
                continue
            if inter / cand.area > cover_threshold or inter / (a.area + cand.area - inter) > iou_threshold:
                suppressed = True
                break
        if not suppressed:
            kept.append(cand)
    return kept


@dataclass
class MatchResult:
    pairs: list[tuple[Detection, Detection]] = field(default_factory=list)
    false_positives: list[Detection] = field(default_factory=list)
    missed: list[Detection] = field(default_factory=list)

    def matched(self, d: Detection) -> bool:
        return any(p[0] is d for p in self.pairs)


def match_detections(dets: Iterable[Detection], truths: Sequence[Detection], min_iou: float = MATCH_IOU) -> MatchResult:
    """Greedy by score: each detection takes the free truth it overlaps most, if ``IoU > min_iou``."""
    result = MatchResult()
    free = list(range(len(truths)))
    for d in sorted(dets, key=Detection.order_key):
        best, best_iou = None, min_iou
        for t in free:
            o = iou(d, truths[t])
            if o > best_iou:
                best, best_iou = t, o
        if best is None:
            result.false_positives.append(d)
        else:
            free.remove(best)
            result.pairs.append((d, truths[best]))
    result.missed = [truths[t] for t in free]
    return result


def detect(
    det: DetectorTemplate,
    f,
    threshold: float | None = None,
    iou_threshold: float = NMS_IOU,
    cover_threshold: float = NMS_COVER,
) -> list[Detection]:
    """Score, threshold (default: the detector's stored threshold) and suppress."""
    scores = score_image(det, f)
    c = det.threshold if threshold is None else threshold
    return nms_greedy(candidates(scores, det.m, det.n, c), iou_threshold, cover_threshold)


CSV_HEADER = ["image", "u", "v", "m", "n", "score", "matched"]


def write_detections_csv(path_or_file, rows: Iterable[tuple[str, Detection, bool]]) -> None:
    def emit(fh):
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(CSV_HEADER)
        for image_id, d, matched in rows:
            out.writerow([image_id, d.u, d.v, d.m, d.n, repr(float(d.score)), int(bool(matched))])

    if hasattr(path_or_file, "write"):
        emit(path_or_file)
    else:
        with open(path_or_file, "w", newline="") as fh:
            emit(fh)


def read_truths_csv(path) -> dict[str, list[Detection]]:
    """``image,u,v,m,n`` rows (header required) grouped by image id."""
    out: dict[str, list[Detection]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            d = Detection(int(row["u"]), int(row["v"]), int(row["m"]), int(row["n"]))
            out.setdefault(row["image"], []).append(d)
    return out
