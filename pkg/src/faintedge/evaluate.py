"""Benchmark machinery: pixel-level F-measure, SNR sweeps, runtime audits."""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from .beamcurve import build_beam_tree, detect_curves
from .edges import EdgeSet
from .image import NoiseSpec, PatternSpec, add_gaussian_noise, generate_test_pattern
from .lines import build_line_pyramid, detect_lines
from .params import DetectorParams, SuppressionParams
from .suppression import PolylineFilter, curve_nms, line_nms, rasterize
from .thresholds import beamcurve_threshold, detection_threshold

DETECTORS = ("lines", "curves-stringent", "curves-greedy")


@dataclass(frozen=True)
class EvalResult:
    precision: float
    recall: float
    f_measure: float
    snr: float
    detector: str
    n_detected: int = 0


@dataclass(frozen=True)
class RunConfig:
    """One full pipeline run: detector choice plus all stage parameters."""

    detector: str = "lines"
    side: int = 129
    params: DetectorParams = field(default_factory=DetectorParams)
    suppression: SuppressionParams = field(default_factory=SuppressionParams)
    match_tol: float = 2.0
    seed: int = 0
    nms: bool = True

    def __post_init__(self):
        if self.detector not in DETECTORS:
            raise ValueError(f"detector must be one of {DETECTORS}")


def f_measure(pred: np.ndarray, gt: np.ndarray, match_tol: float = 2.0,
              snr: float = float("nan"), detector: str = "") -> EvalResult:
    """Precision/recall/F with greedy one-to-one pixel matching.

    A predicted pixel is a true positive if it is matched to a distinct
    ground-truth pixel within match_tol (Euclidean). Matching is greedy in
    order of increasing distance with symmetric tie-breaking, so
    P(pred, gt) = R(gt, pred). Empty-vs-empty scores 1, empty-vs-nonempty 0.
    """
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError("prediction and ground truth dimensions differ")
    p_pts = np.argwhere(pred)
    g_pts = np.argwhere(gt)
    if len(p_pts) == 0 and len(g_pts) == 0:
        return EvalResult(1.0, 1.0, 1.0, snr, detector, 0)
    if len(p_pts) == 0 or len(g_pts) == 0:
        return EvalResult(0.0, 0.0, 0.0, snr, detector, int(len(p_pts)))
    tree = cKDTree(g_pts)
    cand = []
    for pi, neighbors in enumerate(tree.query_ball_point(p_pts, r=match_tol)):
        for gi in neighbors:
            d = float(np.hypot(*(p_pts[pi] - g_pts[gi])))
            ta, tb = tuple(p_pts[pi]), tuple(g_pts[gi])
            cand.append((d, min(ta, tb), max(ta, tb), pi, gi))
    cand.sort()
    used_p = np.zeros(len(p_pts), dtype=bool)
    used_g = np.zeros(len(g_pts), dtype=bool)
    tp = 0
    for _, _, _, pi, gi in cand:
        if not used_p[pi] and not used_g[gi]:
            used_p[pi] = used_g[gi] = True
            tp += 1
    precision = tp / len(p_pts)
    recall = tp / len(g_pts)
    f = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return EvalResult(precision, recall, f, snr, detector, int(len(p_pts)))


def run_detector(img, cfg: RunConfig) -> tuple[EdgeSet, np.ndarray]:
    """Full pipeline on one image: build, detect, suppress, rasterize."""
    img = np.asarray(img, dtype=np.float64)
    params = cfg.params
    retest = PolylineFilter(img, params.w).response
    if cfg.detector == "lines":
        pyr = build_line_pyramid(img, params)
        es = detect_lines(pyr, params)
        if cfg.nms:
            n_pix = img.shape[0] * img.shape[1]
            tp = params.thresholds
            es = line_nms(es, lambda L: detection_threshold(L, 8.0 * n_pix, tp),
                          cfg.suppression, params.w, response_fn=retest)
    else:
        mode = "stringent" if cfg.detector == "curves-stringent" else "greedy"
        tree = build_beam_tree(img, params, mode=mode, keep_heavy=False)
        es = detect_curves(tree, params)
        if cfg.nms:
            n_pix = tree.shape[0] * tree.shape[1]
            tp = params.thresholds
            es = curve_nms(es, lambda L: beamcurve_threshold(L, n_pix, tp),
                           cfg.suppression, response_fn=retest)
    return es, rasterize(es, img.shape)


def _sweep_trial(args):
    snr, trial, cfg = args
    params = cfg.params
    pattern, gt = generate_test_pattern(PatternSpec(side=cfg.side, contrast=snr * params.sigma))
    img = add_gaussian_noise(pattern, NoiseSpec(params.sigma, cfg.seed + trial))
    es, edge_map = run_detector(img, cfg)
    r = f_measure(edge_map, gt, cfg.match_tol, snr=snr, detector=cfg.detector)
    return replace(r, n_detected=len(es))


def snr_sweep(detector: str, snrs, trials: int, cfg: RunConfig | None = None):
    """Run the synthetic benchmark over an SNR list.

    Returns (rows, means): per-trial EvalResults and the per-SNR mean scores.
    Trial t of any SNR uses noise seed cfg.seed + t. FAINTEDGE_THREADS > 1
    runs trials in parallel processes (results are order-stable).
    """
    cfg = replace(cfg or RunConfig(), detector=detector)
    jobs = [(float(snr), t, cfg) for snr in snrs for t in range(trials)]
    n_workers = int(os.environ.get("FAINTEDGE_THREADS", "1") or "1")
    if n_workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            rows = list(pool.map(_sweep_trial, jobs))
    else:
        rows = [_sweep_trial(j) for j in jobs]
    means = []
    for snr in snrs:
        sel = [r for r in rows if r.snr == float(snr)]
        means.append(
            EvalResult(
                precision=float(np.mean([r.precision for r in sel])),
                recall=float(np.mean([r.recall for r in sel])),
                f_measure=float(np.mean([r.f_measure for r in sel])),
                snr=float(snr),
                detector=detector,
                n_detected=int(np.median([r.n_detected for r in sel])),
            )
        )
    return rows, means


def runtime_audit(detector: str, sizes, cfg: RunConfig | None = None):
    """Operation counts and wall time across image sizes, with log-log slope.

    ``sizes`` are image side lengths; operations are response evaluations
    (lines) or stitch-candidate evaluations (beam curves), matching the
    algorithms' complexity accounting.
    """
    cfg = cfg or RunConfig()
    rows = []
    for side in sizes:
        rng_img = NoiseSpec(cfg.params.sigma or 1.0, cfg.seed)
        from .image import noise_image

        img = noise_image((side, side), rng_img)
        t0 = time.perf_counter()
        if detector == "lines":
            pyr = build_line_pyramid(img, cfg.params, responses_only=True)
            ops = pyr.response_ops
        else:
            mode = "stringent" if detector == "curves-stringent" else "greedy"
            tree = build_beam_tree(img, cfg.params, mode=mode, keep_heavy=False)
            ops = tree.stitch_evals
        dt = time.perf_counter() - t0
        rows.append({"side": side, "N": side * side, "ops": int(ops), "seconds": dt})
    if len(rows) >= 2:
        logn = np.log([r["N"] for r in rows])
        logops = np.log([max(r["ops"], 1) for r in rows])
        slope = float(np.polyfit(logn, logops, 1)[0])
    else:
        slope = math.nan
    return rows, slope
