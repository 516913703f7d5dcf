"""Hierarchical straight-line matched filters at dyadic lengths.

Responses are means of a 1-D cross-section difference field along line
segments. They are built by length doubling: a length-2L response in an
existing direction averages two length-L responses sharing an endpoint; a
response in a new intermediate direction averages the four nearest length-L
responses, which form a tight parallelogram around the target segment. The
three resolution principles (halve evaluation rows, keep cross resolution,
double directions) keep the per-level response count fixed, so the full
pyramid holds O(N log N) responses and costs the same to build.

Vertical-class lines (|theta| >= 45 deg) are built on the image, the
horizontal class on its transpose; +/-45 deg segments belong to both classes,
with different cross-section filters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .edges import Edge, EdgeSet
from .image import as_image
from .params import DetectorParams
from .thresholds import cct_threshold_array, detection_threshold

_FULL_CHANNELS = ("resp", "msub", "Msub", "mL", "mR", "qL", "qR")


def _stencil_margins(w: int, s: int) -> tuple[int, int]:
    # Minus block occupies offsets [-(s//2) - w/2, -(s//2) - 1], plus block
    # [(s+1)//2, (s+1)//2 + w/2 - 1]; for odd s the gap is centered.
    return (s // 2) + w // 2, (s + 1) // 2 + w // 2 - 1


def _side_fields(img: np.ndarray, w: int, s: int):
    """Per-pixel means of I and I^2 over the two cross-section sides.

    Returns (mL, mR, qL, qR) with NaN where the stencil exits the image.
    Applies horizontally (vertical-class lines).
    """
    h, n = img.shape
    half = w // 2
    lm, rm = _stencil_margins(w, s)
    out = [np.full((h, n), np.nan) for _ in range(4)]
    mL, mR, qL, qR = out
    if n <= lm + rm:
        return mL, mR, qL, qR
    img2 = img * img
    sl = slice(lm, n - rm)
    accL = np.zeros((h, n - rm - lm))
    accR = np.zeros_like(accL)
    accL2 = np.zeros_like(accL)
    accR2 = np.zeros_like(accL)
    for j in range(half):
        off_l = -(s // 2) - half + j
        off_r = (s + 1) // 2 + j
        accL += img[:, lm + off_l : n - rm + off_l]
        accR += img[:, lm + off_r : n - rm + off_r]
        accL2 += img2[:, lm + off_l : n - rm + off_l]
        accR2 += img2[:, lm + off_r : n - rm + off_r]
    mL[:, sl] = accL / half
    mR[:, sl] = accR / half
    qL[:, sl] = accL2 / half
    qR[:, sl] = accR2 / half
    return mL, mR, qL, qR


def cross_section_responses(img, w: int, s: int, orientation: str = "vertical") -> np.ndarray:
    """Convolve with the 1-D cross-section difference filter.

    The stencil [-1 x w/2, 0 x s, +1 x w/2] / w computes half the difference
    of the two side means; boundary pixels where it exits the image are NaN.
    'vertical' applies it across columns, 'horizontal' across rows.
    """
    img = as_image(img)
    if w < 2 or w % 2:
        raise ValueError("w must be an even integer >= 2")
    if s < 0:
        raise ValueError("s must be nonnegative")
    if orientation == "horizontal":
        return cross_section_responses(img.T, w, s, "vertical").T
    if orientation != "vertical":
        raise ValueError("orientation must be 'vertical' or 'horizontal'")
    mL, mR, _, _ = _side_fields(img, w, s)
    return 0.5 * (mR - mL)


def _xshift(a: np.ndarray, dx: int) -> np.ndarray:
    """Shift along the last axis by dx, filling vacated entries with NaN."""
    if dx == 0:
        return a
    out = np.full_like(a, np.nan)
    if dx > 0:
        out[..., :-dx] = a[..., dx:]
    else:
        out[..., -dx:] = a[..., :dx]
    return out


@dataclass
class LineLevel:
    """All responses of one length on one class's evaluation grid.

    Channel arrays are indexed [direction, row, column] with direction index
    D + L for endpoint x-offset D in [-L, L]; invalid slots hold NaN.
    """

    length: int
    rows: np.ndarray  # y0 of each row index
    channels: dict[str, np.ndarray]

    @property
    def resp(self) -> np.ndarray:
        return self.channels["resp"]

    def valid_count(self) -> int:
        return int(np.isfinite(self.resp).sum())


@dataclass
class LinePyramid:
    shape: tuple[int, int]
    params: DetectorParams
    levels: dict[str, list[LineLevel]] = field(default_factory=dict)
    response_ops: int = 0

    def lengths(self) -> list[int]:
        return [lvl.length for lvl in self.levels["v"]]


def _base_level(fields, responses_only: bool) -> LineLevel | None:
    mL, mR, qL, qR = fields
    h, n = mL.shape
    if h < 2:
        return None
    r = 0.5 * (mR - mL)
    rows = np.arange(h - 1)
    chans = {}
    a = {"resp": r, "mL": mL, "mR": mR, "qL": qL, "qR": qR}
    names = ("resp",) if responses_only else ("resp", "mL", "mR", "qL", "qR")
    for name in names:
        src = a[name]
        out = np.full((3, h - 1, n), np.nan)
        for d in (-1, 0, 1):
            out[d + 1] = 0.5 * (src[:-1] + _xshift(src[1:], d))
        chans[name] = out
    if not responses_only:
        chans["msub"] = chans["resp"].copy()
        chans["Msub"] = chans["resp"].copy()
        chans["msub_len"] = np.ones_like(chans["resp"])
        chans["Msub_len"] = np.ones_like(chans["resp"])
    return LineLevel(1, rows, chans)


def _extreme_update(val, ln, cand_val, cand_len, minimize: bool):
    """Running min/max with the length of the extremal candidate; first
    candidate wins ties."""
    better = (cand_val < val) if minimize else (cand_val > val)
    # NaN candidates (boundary-invalid slots) poison the whole entry, which
    # is correct: the parent is invalid there anyway.
    nan = np.isnan(cand_val) & ~np.isnan(val)
    out_v = np.where(better, cand_val, val)
    out_v = np.where(nan, np.nan, out_v)
    out_l = np.where(better, cand_len, ln)
    return out_v, out_l


def _double_level(child: LineLevel, n_img_rows: int, responses_only: bool, lmin: int) -> LineLevel | None:
    C = child.length
    P = 2 * C
    n = child.resp.shape[2]
    # Parent rows are spaced P/2 = C; the consumed child rows y0 and y0 + C sit
    # on the child's grid (spacing C/2, or 1 at the base), so only the
    # non-overlapping half of the child responses feeds the next level.
    stride, off = (2, 2) if C >= 2 else (1, 1)
    y0 = np.arange(0, n_img_rows, C)
    y0 = y0[y0 + P <= n_img_rows - 1]
    if len(y0) == 0:
        return None
    rp = len(y0)
    sl_a = slice(0, stride * rp, stride)
    sl_b = slice(off, off + stride * rp, stride)

    names = ("resp",) if responses_only else ("resp", "mL", "mR", "qL", "qR")
    shape = (2 * P + 1, rp, n)
    chans = {name: np.full(shape, np.nan) for name in names}
    if not responses_only:
        for name in ("msub", "Msub", "msub_len", "Msub_len"):
            chans[name] = np.full(shape, np.nan)
    # Sub-edges deeper than the immediate halves are tracked only while they
    # stay at least lmin long; shorter pieces are too noisy to test.
    deep = not responses_only and C >= 2 * lmin

    child_resp = child.channels["resp"]

    def subedge_stats(di, immediate, deep_children):
        # immediate: (value, length) of the two halves; deep_children:
        # (msub, msub_len) views of constituent child responses.
        mv, ml = immediate[0][0], np.full_like(immediate[0][0], immediate[0][1])
        Mv, Ml = mv.copy(), ml.copy()
        for val, ln in immediate[1:]:
            mv, ml = _extreme_update(mv, ml, val, np.full_like(val, ln), True)
            Mv, Ml = _extreme_update(Mv, Ml, val, np.full_like(val, ln), False)
        if deep:
            for sub, sub_len, Sub, Sub_len in deep_children:
                mv, ml = _extreme_update(mv, ml, sub, sub_len, True)
                Mv, Ml = _extreme_update(Mv, Ml, Sub, Sub_len, False)
        chans["msub"][di] = mv
        chans["msub_len"][di] = ml
        chans["Msub"][di] = Mv
        chans["Msub_len"][di] = Ml

    def deep_views(ci, shift_):
        if shift_ is None:
            return tuple(child.channels[nm][ci, sl_a] for nm in ("msub", "msub_len", "Msub", "Msub_len"))
        return tuple(_xshift(child.channels[nm][ci, sl_b], shift_) for nm in ("msub", "msub_len", "Msub", "Msub_len"))

    for D in range(-P, P + 1):
        di = D + P
        if D % 2 == 0:
            d = D // 2
            ci = d + C
            for name in names:
                src = child.channels[name]
                chans[name][di] = 0.5 * (src[ci, sl_a] + _xshift(src[ci, sl_b], d))
            if not responses_only:
                ra = child_resp[ci, sl_a]
                rb = _xshift(child_resp[ci, sl_b], d)
                subedge_stats(di, [(ra, C), (rb, C)], [deep_views(ci, None), deep_views(ci, d)])
        else:
            d1 = (D - 1) // 2
            d2 = d1 + 1
            i1, i2 = d1 + C, d2 + C
            for name in names:
                src = child.channels[name]
                chans[name][di] = 0.25 * (
                    src[i1, sl_a]
                    + src[i2, sl_a]
                    + _xshift(src[i2, sl_b], d1)
                    + _xshift(src[i1, sl_b], d2)
                )
            if not responses_only:
                a1 = child_resp[i1, sl_a]
                a2 = child_resp[i2, sl_a]
                b1 = _xshift(child_resp[i2, sl_b], d1)
                b2 = _xshift(child_resp[i1, sl_b], d2)
                half1 = 0.5 * (a1 + a2)
                half2 = 0.5 * (b1 + b2)
                subedge_stats(
                    di,
                    [(half1, C), (half2, C)],
                    [deep_views(i1, None), deep_views(i2, None), deep_views(i2, d1), deep_views(i1, d2)],
                )
    return LineLevel(P, y0, chans)


def _build_class(img, params: DetectorParams, responses_only: bool) -> list[LineLevel]:
    fields = _side_fields(img, params.w, params.s)
    levels = []
    base = _base_level(fields, responses_only)
    if base is None:
        return levels
    levels.append(base)
    max_len = params.max_length or img.shape[0] - 1
    while 2 * levels[-1].length <= min(img.shape[0] - 1, max_len):
        nxt = _double_level(levels[-1], img.shape[0], responses_only, params.cct_min_length)
        if nxt is None:
            break
        levels.append(nxt)
    return levels


def build_line_pyramid(img, params: DetectorParams | None = None, responses_only: bool = False) -> LinePyramid:
    """Build vertical- and horizontal-class response pyramids for an image.

    Stops at the largest length that fits the image (or params.max_length).
    With responses_only=True, skips the sub-response extrema and side-moment
    channels used by the consistent-contrast test (enough for noise
    calibration runs, and several times cheaper).
    """
    img = as_image(img)
    params = params or DetectorParams()
    pyr = LinePyramid(shape=img.shape, params=params)
    pyr.levels["v"] = _build_class(img, params, responses_only)
    pyr.levels["h"] = _build_class(np.ascontiguousarray(img.T), params, responses_only)
    pyr.response_ops = sum(
        lvl.valid_count() for cls in pyr.levels.values() for lvl in cls
    )
    return pyr


def direct_line_response(rfield: np.ndarray, x0: int, y0: int, D: int, L: int) -> float:
    """Trapezoid line integral of a cross-section field along one segment.

    Independent reference for the pyramid: walks rows y0..y0+L, evaluating the
    field at x0 + D*t/L by 3-point Lagrange interpolation along the row.
    """
    total = 0.0
    for t in range(L + 1):
        x = x0 + D * t / L
        i0 = int(np.floor(x))
        f = x - i0
        if f == 0.0:
            v = rfield[y0 + t, i0]
        else:
            w_m = 0.5 * f * (f - 1.0)
            w_0 = 1.0 - f * f
            w_p = 0.5 * f * (f + 1.0)
            v = (
                w_m * rfield[y0 + t, i0 - 1]
                + w_0 * rfield[y0 + t, i0]
                + w_p * rfield[y0 + t, i0 + 1]
            )
        total += v * (0.5 if t in (0, L) else 1.0)
    return float(total / L)


def detect_lines(pyr: LinePyramid, params: DetectorParams | None = None) -> EdgeSet:
    """Threshold the pyramid and apply the consistent-contrast test.

    A response survives if |R| exceeds the detection threshold for its length
    with family size K_L = 8N, and if its weakest same-signed sub-edge clears
    the consistent-contrast threshold built from the side-intensity spread.
    Output is pre-suppression.
    """
    params = params or pyr.params
    tp = params.thresholds
    h, w_img = pyr.shape
    n_pixels = h * w_img
    k_family = 8.0 * n_pixels
    out = EdgeSet(provenance="lines", shape=pyr.shape)
    if params.sigma == 0:
        # Degenerate threshold: accept any strictly nonzero response of a
        # noise-free image; the CCT clamp needs sigma > 0, so skip it.
        sigma_eff = None
    else:
        sigma_eff = params.sigma

    for cls in ("v", "h"):
        for level in pyr.levels[cls]:
            if "msub" not in level.channels:
                raise ValueError("pyramid was built with responses_only=True")
            L = level.length
            resp = level.resp
            if sigma_eff is None:
                T = 0.0
            else:
                T = detection_threshold(L, k_family, tp)
            with np.errstate(invalid="ignore"):
                mask = np.abs(resp) > T
            if not mask.any():
                continue
            idx = np.nonzero(mask)
            r = resp[idx]
            msub = level.channels["msub"][idx]
            Msub = level.channels["Msub"][idx]
            ell = np.maximum(
                np.where(r > 0, level.channels["msub_len"][idx], level.channels["Msub_len"][idx]),
                1.0,
            )
            var_l = level.channels["qL"][idx] - level.channels["mL"][idx] ** 2
            var_r = level.channels["qR"][idx] - level.channels["mR"][idx] ** 2
            sig_e = np.sqrt(np.clip(0.5 * (var_l + var_r), 0.0, None))
            if sigma_eff is None:
                b = 0.5 * np.abs(r)  # sigma_e = sigma limit of the test
            else:
                b = cct_threshold_array(np.abs(r), sig_e, sigma_eff, params.w, ell)
            keep = np.where(r > 0, msub > b, Msub < -b)
            dirs, iys, xs = (a[keep] for a in idx)
            rk, mk, Mk, sk, ek = r[keep], msub[keep], Msub[keep], sig_e[keep], ell[keep]
            mean_i = 0.5 * (level.channels["mL"][idx] + level.channels["mR"][idx])[keep]
            for j in range(len(dirs)):
                D = int(dirs[j]) - L
                y0 = int(level.rows[iys[j]])
                x0 = int(xs[j])
                if cls == "v":
                    poly = np.array([[x0, y0], [x0 + D, y0 + L]], dtype=np.float64)
                    normal = (1.0, 0.0)
                else:
                    poly = np.array([[y0, x0], [y0 + L, x0 + D]], dtype=np.float64)
                    normal = (0.0, 1.0)
                out.edges.append(
                    Edge(
                        polyline=poly,
                        length=float(L),
                        signed_response=float(rk[j]),
                        level=int(np.log2(L)) if L > 1 else 0,
                        kind="line",
                        orientation_class=cls,
                        direction=D,
                        min_sub=float(mk[j]),
                        max_sub=float(Mk[j]),
                        sub_length=float(ek[j]),
                        sigma_e=float(sk[j]),
                        mean_intensity=float(mean_i[j]),
                        plus_normal=normal,
                    )
                )
    return out


def line_count_audit(pyr: LinePyramid) -> list[dict]:
    """Distinct stored segments per length, with the diagonal overlap removed.

    +/-45 deg segments are stored by both classes; a segment is shared exactly
    when its start row and start column both sit on the respective class
    grids, so the audit subtracts those before comparing with the nominal 4N
    (base) / 8N (other levels) accounting.
    """
    rows = []
    v_levels = {lvl.length: lvl for lvl in pyr.levels["v"]}
    h_levels = {lvl.length: lvl for lvl in pyr.levels["h"]}
    for L, lv in v_levels.items():
        lh = h_levels.get(L)
        count = lv.valid_count() + (lh.valid_count() if lh else 0)
        shared = 0
        if lh is not None:
            for D in (-L, L):
                vmask = np.isfinite(lv.resp[D + L])  # [rows_v, x]
                hmask = np.isfinite(lh.resp[D + L])  # [rows_h(=cols), y]
                # v segment (x, y0) -> (x+D, y0+L) coincides with the h
                # segment starting at transpose row x (D=+L) or x-L (D=-L)
                # and transpose column y0 (resp. y0+L).
                if D == L:
                    cols_v = lh.rows
                    cols_h = lv.rows
                else:
                    # Start rows stay on each class grid, so the shifted
                    # columns are always in range.
                    cols_v = lh.rows + L
                    cols_h = lv.rows + L
                sub = vmask[:, cols_v] & hmask[:, cols_h].T
                shared += int(sub.sum())
        rows.append({"L": L, "count": count - shared, "stored": count, "shared": shared})
    return rows
