"""Command-line front-end: stats, train, detect, bench, synth, serve.

Exit codes: 0 success, 1 bad input or failed computation, 2 usage error or
no input images.
"""
from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .bench import parse_size, robust_synthetic_stats, run_bench, write_rows_csv
from .detect import NMS_COVER, NMS_IOU, detect, match_detections, read_truths_csv, write_detections_csv
from .errors import TrainingError
from .features import DEFAULT_BINS, DEFAULT_CELL, RASTER_SUFFIXES, FeatureTransform, read_raster
from .solvers import SolveOptions, SolveReport, write_history_csv
from .stats import (
    FeatureImage,
    StationaryAccumulator,
    finalize,
    merge,
    positive_mean,
    read_stats,
    write_stats,
)
from .toeplitz import DEFAULT_LAMBDA
from .trainer import (
    METHODS,
    DetectorTemplate,
    Trainer,
    TrainRequest,
    calibrate_threshold,
    canonical_method,
    read_detector,
    write_detector,
)

log = logging.getLogger("structcov")

INPUT_SUFFIXES = RASTER_SUFFIXES + (".npy",)


class CliError(Exception):
    def __init__(self, msg: str, code: int = 1):
        super().__init__(msg)
        self.code = code


def list_inputs(directory) -> list[Path]:
    d = Path(directory)
    if d.is_file():
        return [d]
    if not d.is_dir():
        raise CliError(f"{d}: not a directory")
    return sorted(p for p in d.iterdir() if p.is_file() and p.suffix.lower() in INPUT_SUFFIXES)


def load_features(path: Path, transform: FeatureTransform) -> FeatureImage:
    """``.npy`` files are taken as feature images ``(k, H, W)`` or ``(H, W)``; rasters go through ``transform``."""
    if path.suffix.lower() == ".npy":
        a = np.load(path, allow_pickle=False)
        if a.ndim == 2:
            a = a[None]
        return FeatureImage(np.asarray(a, dtype=np.float64), path.name)
    return transform(read_raster(path), path.name)


def _transform(args) -> FeatureTransform:
    return FeatureTransform(args.features, args.cell, args.bins)


def _add_feature_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--features", choices=("identity", "hoglite"), default="identity")
    p.add_argument("--cell", type=int, default=DEFAULT_CELL, help="hoglite cell size in pixels")
    p.add_argument("--bins", type=int, default=DEFAULT_BINS, help="hoglite orientation bins")


# -- stats -------------------------------------------------------------------

def _accumulate_chunk(paths, transform, dmax_u, dmax_v, method):
    acc, errors = None, []
    for path in paths:
        try:
            f = load_features(path, transform)
            if acc is None:
                acc = StationaryAccumulator(f.k, dmax_u, dmax_v)
            acc.add(f, method)
        except (OSError, ValueError) as exc:
            errors.append(f"{path}: {exc}")
    return acc, errors


def cmd_stats(args) -> int:
    files = list_inputs(args.images)
    if not files:
        print("error: no images", file=sys.stderr)
        return 2
    transform = _transform(args)
    method = "naive" if args.naive else "fft"
    workers = max(1, min(args.workers, len(files)))
    chunks = [files[i::workers] for i in range(workers)]
    with ThreadPoolExecutor(workers) as pool:
        parts = list(pool.map(lambda c: _accumulate_chunk(c, transform, args.dmax_u, args.dmax_v, method), chunks))
    errors = [e for _, errs in parts for e in errs]
    for e in errors:
        print(f"error: {e}", file=sys.stderr)
    if errors:
        raise CliError(f"{len(errors)} unreadable input(s)")
    accs = [a for a, _ in parts if a is not None]
    acc = accs[0]
    for other in accs[1:]:
        acc = merge(acc, other)
    try:
        stats = finalize(acc, centered=not args.uncentered)
    except ValueError as exc:
        raise CliError(str(exc))
    write_stats(stats, args.out)
    print(f"images={stats.image_count} pixels={stats.pixel_count} k={stats.k} "
          f"dmax={stats.dmax_u}x{stats.dmax_v} -> {args.out}")
    return 0


# -- train -------------------------------------------------------------------

def _positives(args, transform, k, m, n) -> list[FeatureImage]:
    files = list_inputs(args.positives)
    if not files:
        raise CliError("no images in positives directory", 2)
    feats = []
    for path in files:
        try:
            f = load_features(path, transform)
        except (OSError, ValueError) as exc:
            raise CliError(f"{path}: {exc}")
        if f.shape != (k, m, n):
            raise CliError(f"{path}: features have shape {f.shape}, expected {(k, m, n)} for --size {m}x{n}")
        feats.append(f)
    return feats


def _train_remote(args, stats, pos_mean, method):
    from .service.client import ServiceClient, ServiceError

    client = ServiceClient(args.server)
    try:
        sid = client.upload_stats(stats)["id"]
        out = client.train(sid, pos_mean, method, args.lam, args.tol, args.max_iter)
        det = client.detector(out["detector"]["id"])
    except ServiceError as exc:
        raise CliError(f"server: {exc}")
    finally:
        client.close()
    r = out["report"]
    residual = r["residual"] if r["residual"] is not None else float("nan")
    report = SolveReport(det.weights, r["iterations"], residual, r["converged"], r["method"],
                         r["history"], r["history_times"], r["cold_time"], r["warm_time"])
    return det, report


def cmd_train(args) -> int:
    try:
        stats = read_stats(args.stats)
    except (OSError, ValueError) as exc:
        raise CliError(f"{args.stats}: {exc}")
    m, n = parse_size(args.size)
    if m - 1 > stats.dmax_u or n - 1 > stats.dmax_v:
        mu, mv = stats.max_template
        raise CliError(f"stats extent too small for --size {m}x{n}; max supported template size is {mu}x{mv}")
    method = canonical_method(args.method)
    transform = _transform(args)
    feats = _positives(args, transform, stats.k, m, n)
    pos_mean = positive_mean(feats, m, n)
    try:
        if args.server:
            det, report = _train_remote(args, stats, pos_mean, method)
        else:
            req = TrainRequest(stats, pos_mean, method, args.lam, SolveOptions(args.tol, args.max_iter))
            det, report = Trainer().train(req)
    except (TrainingError, ValueError) as exc:
        raise CliError(f"training failed: {exc}")
    # mean negative score is exact under stationarity: sum_p mu_p * sum(w_p)
    pos_scores = [float(np.sum(det.weights * f.values)) for f in feats]
    neg_mean = float(np.dot(stats.mu, det.weights.sum(axis=(1, 2))))
    calibrate_threshold(det, pos_scores, [neg_mean])
    det.metadata.update(transform.to_metadata())
    write_detector(det, args.out)
    if args.report:
        write_history_csv(report, args.report)
    if not report.converged:
        print(f"warning: {method} stopped at max iterations, residual {report.residual:.3e}", file=sys.stderr)
    print(report.summary())
    print(f"positives={len(feats)} threshold={det.threshold:.6g} -> {args.out}")
    return 0


# -- detect ------------------------------------------------------------------

def cmd_detect(args) -> int:
    try:
        det: DetectorTemplate = read_detector(args.detector)
    except (OSError, ValueError) as exc:
        raise CliError(f"{args.detector}: {exc}")
    transform = FeatureTransform.from_metadata(det.metadata)
    files = list_inputs(args.images)
    if not files:
        print("error: no images", file=sys.stderr)
        return 2
    truths = read_truths_csv(args.truths) if args.truths else None
    rows, n_match, n_truth = [], 0, 0
    for path in files:
        try:
            f = load_features(path, transform)
        except (OSError, ValueError) as exc:
            raise CliError(f"{path}: {exc}")
        if f.k != det.k:
            raise CliError(f"{path}: geometry mismatch, features have {f.k} channels, detector has {det.k}")
        try:
            dets = detect(det, f, args.threshold, args.nms_iou, args.nms_cover)
        except ValueError as exc:
            raise CliError(f"{path}: {exc}")
        if truths is not None:
            gt = truths.get(path.name, [])
            result = match_detections(dets, gt)
            n_match += len(result.pairs)
            n_truth += len(gt)
            rows.extend((path.name, d, result.matched(d)) for d in dets)
        else:
            rows.extend((path.name, d, False) for d in dets)
    if args.out:
        write_detections_csv(args.out, rows)
    else:
        write_detections_csv(sys.stdout, rows)
    msg = f"images={len(files)} detections={len(rows)}"
    if truths is not None:
        msg += f" matched={n_match}/{n_truth}"
    print(msg, file=sys.stderr)
    return 0


# -- bench -------------------------------------------------------------------

def cmd_bench(args) -> int:
    sizes = [parse_size(s) for s in args.sizes.split(",") if s]
    methods = [canonical_method(s) for s in args.methods.split(",") if s]
    tols = [float(s) for s in args.tols.split(",") if s]
    lam = args.lam
    if args.stats:
        try:
            stats = read_stats(args.stats)
        except (OSError, ValueError) as exc:
            raise CliError(f"{args.stats}: {exc}")
    else:
        m = max(s[0] for s in sizes)
        n = max(s[1] for s in sizes)
        stats, lam = robust_synthetic_stats(args.k, m, n, args.seed, lam)
    try:
        rows = run_bench(stats, sizes, methods, tols, args.repeats, lam, args.max_iter, args.seed, args.history_dir)
    except (TrainingError, ValueError) as exc:
        raise CliError(str(exc))
    write_rows_csv(rows, args.out or sys.stdout)
    return 0


# -- synth / serve -----------------------------------------------------------

def cmd_synth(args) -> int:
    from .synthetic import write_corpus

    lay = write_corpus(args.out, args.seed, args.negatives, args.positives, args.test,
                       parse_size(args.image_size), parse_size(args.pattern_size), args.cell, args.targets)
    print(f"negatives={lay.negatives} positives={lay.positives} test={lay.test} truths={lay.truths}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="structcov", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="accumulate stationary statistics over an image directory")
    p.add_argument("images", help="directory of rasters (.pgm/.png) or feature arrays (.npy)")
    _add_feature_flags(p)
    p.add_argument("--dmax-u", type=int, default=11)
    p.add_argument("--dmax-v", type=int, default=27)
    p.add_argument("--naive", action="store_true", help="direct summation instead of FFT correlation")
    p.add_argument("--uncentered", action="store_true", help="skip mean subtraction")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="train an LDA detector from stats and positives")
    p.add_argument("--stats", required=True)
    p.add_argument("--positives", required=True)
    p.add_argument("--size", required=True, help="template size MxN in feature cells")
    p.add_argument("--method", choices=("chol", "circ") + METHODS, default="pcg")
    p.add_argument("--lambda", dest="lam", type=float, default=DEFAULT_LAMBDA)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="CSV path for the residual history")
    p.add_argument("--server", help="train on a running service at this URL")
    _add_feature_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="score images, suppress, optionally match against truths")
    p.add_argument("--detector", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--threshold", type=float, default=None, help="default: the detector's stored threshold")
    p.add_argument("--nms-iou", type=float, default=NMS_IOU)
    p.add_argument("--nms-cover", type=float, default=NMS_COVER)
    p.add_argument("--truths", help="CSV image,u,v,m,n")
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("bench", help="time the four training methods")
    p.add_argument("--sizes", default="12x12,12x28")
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--methods", default=",".join(METHODS))
    p.add_argument("--tols", default="1e-6")
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--lambda", dest="lam", type=float, default=DEFAULT_LAMBDA)
    p.add_argument("--max-iter", type=int, default=1000)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--stats")
    src.add_argument("--synthetic", action="store_true", help="generated SPD stats (default)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--history-dir", help="directory for per-run residual-history CSVs")
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="write a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--negatives", type=int, default=100)
    p.add_argument("--positives", type=int, default=30)
    p.add_argument("--test", type=int, default=10)
    p.add_argument("--image-size", default="128x128")
    p.add_argument("--pattern-size", default="32x24")
    p.add_argument("--cell", type=int, default=DEFAULT_CELL)
    p.add_argument("--targets", type=int, default=1)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("serve", help="run the HTTP training service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
