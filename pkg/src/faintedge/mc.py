"""Monte-Carlo harnesses: empirical noise thresholds and the greedy
monotone-curve lower bound.

Per-trial seeds are derived as base seed + trial index, so runs are
reproducible and trials could execute in parallel without changing results.
"""

from __future__ import annotations

import math
import os

import numpy as np

from .image import NoiseSpec, noise_image
from .params import DetectorParams
from .lines import build_line_pyramid


def greedy_monotone_response(img, p0: tuple[int, int], L: int) -> float:
    """Mean response of the greedily selected monotone curve from p0.

    Walks L steps east / north-east with the width-2 filter
    r(x, y) = (I(x, y+1) - I(x, y-1)) / 2, at each step taking the larger of
    the two candidate responses in the next column. Each step reads fresh
    pixels, so step responses are independent.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    x0, y0 = p0
    if L < 1:
        raise ValueError("L must be a positive integer")
    if not (y0 - 1 >= 0 and y0 + L + 2 <= h - 1 and 0 <= x0 and x0 + L <= w - 1):
        raise ValueError("p0 too close to the image boundary for this L")
    total = 0.0
    y = y0
    for step in range(1, L + 1):
        x = x0 + step
        r_east = 0.5 * (img[y + 1, x] - img[y - 1, x])
        r_ne = 0.5 * (img[y + 2, x] - img[y, x])
        if r_ne > r_east:
            total += r_ne
            y += 1
        else:
            total += r_east
    return total / L


def monotone_curve_samples(trials: int, L: int, sigma: float, seed: int = 0) -> np.ndarray:
    """Responses of independent greedy monotone curves on fresh noise images.

    Each trial draws its own (L+4) x (L+2) pure-noise image, so samples are
    i.i.d.; their mean tends to sigma/sqrt(2*pi) and their variance to
    (sigma^2 / 2L)(1 - 1/pi).
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    out = np.empty(trials)
    for t in range(trials):
        img = noise_image((L + 4, L + 2), NoiseSpec(sigma, seed + t))
        out[t] = greedy_monotone_response(img, (0, 1), L)
    return out


def _line_trial_maxima(n_side: int, lengths, noise_sigma: float, seed: int, params: DetectorParams):
    img = noise_image((n_side, n_side), NoiseSpec(noise_sigma, seed))
    pyr = build_line_pyramid(img, params, responses_only=True)
    by_len = {}
    for cls in ("v", "h"):
        for lvl in pyr.levels[cls]:
            with np.errstate(invalid="ignore"):
                m = float(np.nanmax(np.abs(lvl.resp)))
            by_len[lvl.length] = max(by_len.get(lvl.length, 0.0), m)
    return [by_len.get(L, math.nan) for L in lengths]


def _curve_trial_maxima(n_side: int, lengths, noise_sigma: float, seed: int, params: DetectorParams, mode: str):
    from .beamcurve import build_beam_tree

    img = noise_image((n_side, n_side), NoiseSpec(noise_sigma, seed))
    lengths = sorted(lengths)
    edges = [float(x) for x in lengths] + [np.inf]
    maxima = np.zeros(len(lengths))

    def harvest(tile, arrays, new_mask):
        r = np.abs(arrays["r_signed"])
        ln = arrays["sumL"]
        ok = new_mask & np.isfinite(r)
        if not ok.any():
            return
        rv, lv = r[ok], ln[ok]
        for i in range(len(lengths)):
            sel = (lv >= edges[i]) & (lv < edges[i + 1])
            if sel.any():
                maxima[i] = max(maxima[i], float(rv[sel].max()))

    build_beam_tree(img, params, mode=mode, on_tile=harvest, keep_heavy=False)
    return list(maxima)


def empirical_max_response(
    family: str,
    N: int,
    lengths,
    trials: int,
    noise: NoiseSpec,
    p: DetectorParams | None = None,
    mode: str = "stringent",
):
    """Median over trials of the maximal |response| at each length on pure noise.

    family 'straight-lines': lengths are exact pyramid lengths (powers of 2).
    family 'beam-curves': lengths are bin lower edges; curves of length in
    [L_i, L_{i+1}) are pooled per bin (stored beam curves have data-dependent
    lengths). Returns a list of {'L', 'median'} rows.
    """
    if trials < 3:
        raise ValueError("need at least 3 trials for a meaningful median")
    n_side = math.isqrt(N)
    if n_side * n_side != N:
        raise ValueError("N must be a perfect square pixel count")
    p = p or DetectorParams(sigma=noise.sigma)
    lengths = sorted(int(L) for L in lengths)

    rows = []
    per_trial = []
    n_workers = int(os.environ.get("FAINTEDGE_THREADS", "1") or "1")
    seeds = [noise.seed + t for t in range(trials)]
    if family == "straight-lines":
        fn = lambda s: _line_trial_maxima(n_side, lengths, noise.sigma, s, p)
    elif family == "beam-curves":
        fn = lambda s: _curve_trial_maxima(n_side, lengths, noise.sigma, s, p, mode)
    else:
        raise ValueError("family must be 'straight-lines' or 'beam-curves'")
    if n_workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        args = [(family, n_side, lengths, noise.sigma, s, p, mode) for s in seeds]
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            per_trial = list(pool.map(_trial_worker, args))
    else:
        per_trial = [fn(s) for s in seeds]
    arr = np.asarray(per_trial)  # [trials, lengths]
    for i, L in enumerate(lengths):
        col = arr[:, i]
        col = col[np.isfinite(col)]
        med = float(np.median(col)) if len(col) else math.nan
        rows.append({"L": L, "median": med, "family": family})
    return rows


def _trial_worker(args):
    family, n_side, lengths, sigma, seed, p, mode = args
    if family == "straight-lines":
        return _line_trial_maxima(n_side, lengths, sigma, seed, p)
    return _curve_trial_maxima(n_side, lengths, sigma, seed, p, mode)
