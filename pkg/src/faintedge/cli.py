"""Command-line interface.

Subcommands: simulate, detect-lines, detect-curves, enhance-fibers,
validate-threshold, sweep, audit. All randomness is seeded, so repeated runs
with the same arguments produce byte-identical outputs. FAINTEDGE_THREADS
caps Monte-Carlo parallelism (default 1).
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import click
import numpy as np

from .beamcurve import build_beam_tree, detect_curves
from .evaluate import RunConfig, runtime_audit, snr_sweep
from .fibers import DiffusionParams, classify_signs, enhance_fibers, total_fiber_length
from .image import (
    NoiseSpec,
    PatternSpec,
    add_gaussian_noise,
    generate_test_pattern,
    load_image,
    save_image,
)
from .lines import build_line_pyramid, detect_lines
from .mc import empirical_max_response
from .params import DetectorParams, SuppressionParams
from .suppression import curve_nms, line_nms, rasterize
from .thresholds import beamcurve_threshold, detection_threshold

# Fixed-point convention for float-valued images written as 16-bit PGM/PNG.
INTENSITY_SCALE = 1000.0
INTENSITY_OFFSET = 32768.0


def _save_float_image(img, path):
    save_image(img * INTENSITY_SCALE + INTENSITY_OFFSET, path, bit_depth=16)


def _detector_params(w, s, sigma, delta, beta=0.65, k=40, max_length=None):
    return DetectorParams(w=w, s=s, sigma=sigma, delta=delta, beta=beta, k=k, max_length=max_length)


@click.group()
def main():
    """Faint-edge detection toolkit."""


@main.command()
@click.option("--side", default=129, show_default=True)
@click.option("--contrast", default=1.0, show_default=True, help="Foreground intensity tau.")
@click.option("--sigma", default=0.0, show_default=True, help="Noise level to add.")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True, help="Noisy (or clean) pattern image.")
@click.option("--clean-out", type=click.Path(), default=None, help="Noise-free pattern image.")
@click.option("--gt-out", type=click.Path(), default=None, help="Ground-truth edge map (8-bit).")
def simulate(side, contrast, sigma, seed, out, clean_out, gt_out):
    """Render the synthetic test pattern, optionally with Gaussian noise.

    Float intensities are stored as 16-bit fixed point: value*1000 + 32768.
    """
    pattern, gt = generate_test_pattern(PatternSpec(side=side, contrast=contrast))
    img = add_gaussian_noise(pattern, NoiseSpec(sigma, seed)) if sigma > 0 else pattern
    _save_float_image(img, out)
    if clean_out:
        _save_float_image(pattern, clean_out)
    if gt_out:
        save_image(np.where(gt, 255.0, 0.0), gt_out, bit_depth=8)
    click.echo(f"pattern side={side} contrast={contrast} sigma={sigma} -> {out}")


def _load_for_detection(path):
    img = load_image(path)
    return img


@main.command("detect-lines")
@click.argument("input_path", type=click.Path(exists=True))
@click.option("--w", default=4, show_default=True)
@click.option("--s", default=1, show_default=True)
@click.option("--sigma", required=True, type=float, help="Noise level in image units.")
@click.option("--delta", default=0.5, show_default=True)
@click.option("--max-length", default=None, type=int)
@click.option("--no-nms", is_flag=True, help="Emit pre-suppression detections.")
@click.option("--out-json", type=click.Path(), default=None)
@click.option("--out-map", type=click.Path(), default=None, help="Rasterized edge map (8-bit).")
def detect_lines_cmd(input_path, w, s, sigma, delta, max_length, no_nms, out_json, out_map):
    """Detect straight edges; prints a summary and writes JSON/raster outputs."""
    img = _load_for_detection(input_path)
    params = _detector_params(w, s, sigma, delta, max_length=max_length)
    pyr = build_line_pyramid(img, params)
    es = detect_lines(pyr, params)
    if not no_nms:
        n_pix = img.shape[0] * img.shape[1]
        tp = params.thresholds
        es = line_nms(es, lambda L: detection_threshold(L, 8.0 * n_pix, tp), SuppressionParams(), w)
    records = [
        {
            "x0": e.start[0],
            "y0": e.start[1],
            "x1": e.end[0],
            "y1": e.end[1],
            "L": e.length,
            "R": e.response,
        }
        for e in es
    ]
    if out_json:
        Path(out_json).write_text(json.dumps({"detector": "lines", "edges": records}, indent=1) + "\n")
    if out_map:
        save_image(np.where(rasterize(es, img.shape), 255.0, 0.0), out_map, bit_depth=8)
    click.echo(f"detected {len(records)} line segments")


@main.command("detect-curves")
@click.argument("input_path", type=click.Path(exists=True))
@click.option("--mode", type=click.Choice(["stringent", "greedy"]), default="stringent", show_default=True)
@click.option("--k", default=40, show_default=True)
@click.option("--w", default=4, show_default=True)
@click.option("--sigma", required=True, type=float)
@click.option("--delta", default=0.5, show_default=True)
@click.option("--beta", default=0.65, show_default=True)
@click.option("--no-nms", is_flag=True)
@click.option("--out-json", type=click.Path(), default=None)
@click.option("--out-map", type=click.Path(), default=None)
def detect_curves_cmd(input_path, mode, k, w, sigma, delta, beta, no_nms, out_json, out_map):
    """Detect curved edges with the beam-curve tree."""
    img = _load_for_detection(input_path)
    params = _detector_params(w, 1, sigma, delta, beta=beta, k=k)
    tree = build_beam_tree(img, params, mode=mode, keep_heavy=False)
    es = detect_curves(tree, params)
    if not no_nms:
        n_pix = tree.shape[0] * tree.shape[1]
        tp = params.thresholds
        es = curve_nms(es, lambda L: beamcurve_threshold(L, n_pix, tp), SuppressionParams())
    records = [
        {"polyline": np.asarray(e.polyline).tolist(), "L": e.length, "R": e.response}
        for e in es
    ]
    if out_json:
        Path(out_json).write_text(json.dumps({"detector": f"curves-{mode}", "edges": records}, indent=1) + "\n")
    if out_map:
        save_image(np.where(rasterize(es, img.shape), 255.0, 0.0), out_map, bit_depth=8)
    click.echo(f"detected {len(records)} curves ({mode}, stitch evals {tree.stitch_evals})")


@main.command("enhance-fibers")
@click.argument("input_path", type=click.Path(exists=True))
@click.option("--sigma", required=True, type=float)
@click.option("--w", default=4, show_default=True)
@click.option("--s", default=1, show_default=True)
@click.option("--delta", default=0.5, show_default=True)
@click.option("--varx", default=2.25, show_default=True)
@click.option("--vary", default=1.0, show_default=True)
@click.option("--orientation", default=90.0, show_default=True, help="Canonical fiber direction (deg).")
@click.option("--length-threshold", default=None, type=float,
              help="Fiber-length threshold on the enhanced map [default: 10% of max].")
@click.option("--out", type=click.Path(), required=True, help="Enhanced image (16-bit, autoscaled).")
def enhance_fibers_cmd(input_path, sigma, w, s, delta, varx, vary, orientation, length_threshold, out):
    """Detect straight edges, pair opposite gradient signs, enhance fibers."""
    img = _load_for_detection(input_path)
    params = _detector_params(w, s, sigma, delta)
    pyr = build_line_pyramid(img, params)
    es = detect_lines(pyr, params)
    n_pix = img.shape[0] * img.shape[1]
    tp = params.thresholds
    es = line_nms(es, lambda L: detection_threshold(L, 8.0 * n_pix, tp), SuppressionParams(), w)
    maps = classify_signs(es, canonical_orientation=orientation)
    dp = DiffusionParams(var_x=varx, var_y=vary)
    enhanced = enhance_fibers(maps, dp, orientation)
    peak = float(enhanced.max())
    thr = length_threshold if length_threshold is not None else 0.1 * peak
    length = total_fiber_length(enhanced, thr)
    scale = 65535.0 / peak if peak > 0 else 1.0
    save_image(enhanced * scale, out, bit_depth=16)
    click.echo(f"total_fiber_length {length:.3f} (threshold {thr:.6g}, peak {peak:.6g})")


@main.command("validate-threshold")
@click.option("--family", type=click.Choice(["lines", "curves"]), default="lines", show_default=True)
@click.option("--side", default=129, show_default=True)
@click.option("--lengths", default="2,4,8,16,32,64", show_default=True)
@click.option("--trials", default=100, show_default=True)
@click.option("--sigma", default=1.0, show_default=True)
@click.option("--w", default=4, show_default=True)
@click.option("--delta", default=0.5, show_default=True)
@click.option("--beta", default=0.65, show_default=True)
@click.option("--mode", type=click.Choice(["stringent", "greedy"]), default="stringent", show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True, help="CSV output.")
def validate_threshold(family, side, lengths, trials, sigma, w, delta, beta, mode, seed, out):
    """Compare theoretical thresholds with pure-noise empirical maxima."""
    ls = [int(x) for x in lengths.split(",") if x]
    params = DetectorParams(w=w, s=1, sigma=sigma, delta=delta, beta=beta)
    fam = "straight-lines" if family == "lines" else "beam-curves"
    rows = empirical_max_response(fam, side * side, ls, trials, NoiseSpec(sigma, seed), params, mode=mode)
    tp = params.thresholds
    n_pix = side * side
    with open(out, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["L", "theoretical_T", "empirical_median", "family"])
        for row in rows:
            if family == "lines":
                theo = detection_threshold(row["L"], 8.0 * n_pix, tp)
            else:
                theo = beamcurve_threshold(row["L"], n_pix, tp)
            wr.writerow([row["L"], repr(theo), repr(row["median"]), family])
    click.echo(f"wrote {len(rows)} rows to {out}")


@main.command()
@click.option("--detector", type=click.Choice(["lines", "curves-stringent", "curves-greedy"]),
              default="lines", show_default=True)
@click.option("--snrs", default="0,0.4,0.8,1.2,1.6,2.0", show_default=True)
@click.option("--trials", default=20, show_default=True)
@click.option("--side", default=129, show_default=True)
@click.option("--sigma", default=1.0, show_default=True)
@click.option("--match-tol", default=2.0, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True, help="CSV output.")
def sweep(detector, snrs, trials, side, sigma, match_tol, seed, out):
    """Synthetic-benchmark SNR sweep with F-measure scoring."""
    snr_list = [float(x) for x in snrs.split(",") if x != ""]
    cfg = RunConfig(
        detector=detector,
        side=side,
        params=DetectorParams(sigma=sigma),
        match_tol=match_tol,
        seed=seed,
    )
    rows, means = snr_sweep(detector, snr_list, trials, cfg)
    with open(out, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["kind", "detector", "snr", "trial", "precision", "recall", "f_measure", "n_detected"])
        for t, r in enumerate(rows):
            wr.writerow(["trial", r.detector, r.snr, t % trials, repr(r.precision), repr(r.recall),
                         repr(r.f_measure), r.n_detected])
        for m in means:
            wr.writerow(["mean", m.detector, m.snr, "", repr(m.precision), repr(m.recall),
                         repr(m.f_measure), m.n_detected])
    for m in means:
        click.echo(f"snr {m.snr:g}: mean F {m.f_measure:.3f} (median detections {m.n_detected})")


@main.command()
@click.option("--detector", type=click.Choice(["lines", "curves-stringent", "curves-greedy"]),
              default="curves-stringent", show_default=True)
@click.option("--sizes", default="65,129", show_default=True, help="Image side lengths.")
@click.option("--sigma", default=1.0, show_default=True)
@click.option("--k", default=40, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", type=click.Path(), default=None, help="Optional CSV output.")
def audit(detector, sizes, sigma, k, seed, out):
    """Operation-count and wall-time scaling audit."""
    side_list = [int(x) for x in sizes.split(",") if x]
    cfg = RunConfig(detector="lines", params=DetectorParams(sigma=sigma, k=k), seed=seed)
    rows, slope = runtime_audit(detector, side_list, cfg)
    if out:
        with open(out, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["detector", "side", "N", "ops", "seconds"])
            for r in rows:
                wr.writerow([detector, r["side"], r["N"], r["ops"], f"{r['seconds']:.6f}"])
    for r in rows:
        click.echo(f"N={r['N']}: ops={r['ops']} time={r['seconds']:.3f}s")
    click.echo(f"log-log ops slope: {slope:.3f}")


if __name__ == "__main__":
    main()
