"""Non-maximum suppression and edge-map rasterization.

Lines go through angular suppression (same center, same length: keep the
strongest), spatial suppression (local maxima among same-orientation
neighbors), and inter-level suppression (a line mostly covered by accepted
double-length lines is dropped; a partially covered one keeps its uncovered
portion if that portion still clears its own length's threshold). Curves are
processed from the top tile level down in descending response order, with
overlap judged by the symmetric median Hausdorff distance between
unit-spacing polyline samples of their sub-curves.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.spatial import cKDTree

from .edges import Edge, EdgeSet
from .params import SuppressionParams


def _sample_polyline(poly: np.ndarray, spacing: float = 1.0) -> np.ndarray:
    """Points along a polyline at approximately unit arc-length spacing."""
    poly = np.asarray(poly, dtype=np.float64)
    if len(poly) == 1:
        return poly
    segs = np.diff(poly, axis=0)
    seg_len = np.hypot(segs[:, 0], segs[:, 1])
    total = seg_len.sum()
    if total == 0:
        return poly[:1]
    n = max(2, int(round(total / spacing)) + 1)
    t = np.linspace(0.0, total, n)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    x = np.interp(t, cum, poly[:, 0])
    y = np.interp(t, cum, poly[:, 1])
    return np.stack([x, y], axis=1)


def _min_dist_to_segments(pts: np.ndarray, seg_a: np.ndarray, seg_b: np.ndarray) -> np.ndarray:
    """Min distance from each point to a set of segments, fully vectorized.

    pts [S,2], seg_a/seg_b [M,2] segment endpoints -> [S] distances.
    """
    d = seg_b - seg_a  # [M,2]
    den = np.einsum("md,md->m", d, d)  # [M]
    den = np.where(den == 0, 1.0, den)
    rel = pts[:, None, :] - seg_a[None, :, :]  # [S,M,2]
    t = np.clip(np.einsum("smd,md->sm", rel, d) / den, 0.0, 1.0)
    proj = seg_a[None, :, :] + t[:, :, None] * d[None, :, :]
    dist = np.hypot(pts[:, None, 0] - proj[:, :, 0], pts[:, None, 1] - proj[:, :, 1])
    return dist.min(axis=1)


def median_hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric median Hausdorff distance between two sampled point sets."""
    ta = cKDTree(a)
    tb = cKDTree(b)
    da = np.median(tb.query(a)[0])
    db = np.median(ta.query(b)[0])
    return float(max(da, db))


class PolylineFilter:
    """Directly evaluated matched filter for arbitrary polylines.

    Offset polylines at +/-1..w/2 pixels along per-vertex normals sample the
    two flanking strips (bicubic, trapezoid weights, max-norm lengths);
    samples outside the image are dropped from their side's normalizer. Used
    to retest the uncovered portions kept by non-maximum suppression.
    """

    def __init__(self, img: np.ndarray, w: int):
        self.w = w
        self.h, self.wd = img.shape
        self._pad = np.pad(np.asarray(img, dtype=np.float64), 2, mode="edge")

    def _bicubic(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        bx = np.floor(xs).astype(int)
        by = np.floor(ys).astype(int)
        fx = xs - bx
        fy = ys - by

        def wts(f):
            return (
                -f * (f - 1) * (f - 2) / 6.0,
                (f + 1) * (f - 1) * (f - 2) / 2.0,
                -(f + 1) * f * (f - 2) / 2.0,
                (f + 1) * f * (f - 1) / 6.0,
            )

        wx = wts(fx)
        wy = wts(fy)
        p = self._pad
        bxc = np.clip(bx + 2, 1, self.wd + 1)
        byc = np.clip(by + 2, 1, self.h + 1)
        out = np.zeros_like(xs, dtype=np.float64)
        for iy in range(4):
            row = np.zeros_like(out)
            for ix in range(4):
                row += wx[ix] * p[byc + iy - 1, bxc + ix - 1]
            out += wy[iy] * row
        return out

    def response(self, poly) -> float:
        poly = np.asarray(poly, dtype=np.float64)
        if len(poly) < 2:
            return 0.0
        d = np.diff(poly, axis=0)
        seg_n = np.stack([-d[:, 1], d[:, 0]], axis=1)
        nrm = np.hypot(seg_n[:, 0], seg_n[:, 1])
        nrm[nrm == 0] = 1.0
        seg_n /= nrm[:, None]
        vert_n = np.vstack([seg_n[:1], seg_n[:-1] + seg_n[1:], seg_n[-1:]])
        vn = np.hypot(vert_n[:, 0], vert_n[:, 1])
        vn[vn == 0] = 1.0
        vert_n /= vn[:, None]

        acc = {+1: [0.0, 0.0], -1: [0.0, 0.0]}  # side -> [integral, length]
        for s in range(1, self.w // 2 + 1):
            for sign in (+1, -1):
                off = poly + sign * s * vert_n
                seg = np.diff(off, axis=0)
                lens = np.max(np.abs(seg), axis=1)
                for k in range(len(off) - 1):
                    L = lens[k]
                    n = max(2, int(round(L)) + 1)
                    t = np.linspace(0.0, 1.0, n)
                    xs = off[k, 0] + t * seg[k, 0]
                    ys = off[k, 1] + t * seg[k, 1]
                    wts = np.full(n, L / (n - 1))
                    wts[0] *= 0.5
                    wts[-1] *= 0.5
                    ok = (xs >= 0) & (xs <= self.wd - 1) & (ys >= 0) & (ys <= self.h - 1)
                    if not ok.any():
                        continue
                    vals = self._bicubic(xs[ok], ys[ok])
                    acc[sign][0] += float((wts[ok] * vals).sum())
                    acc[sign][1] += float(wts[ok].sum())
        if acc[+1][1] <= 0 or acc[-1][1] <= 0:
            return 0.0
        return 0.5 * (acc[+1][0] / acc[+1][1] - acc[-1][0] / acc[-1][1])


def polyline_response(img: np.ndarray, poly, w: int) -> float:
    """One-shot PolylineFilter evaluation (pads the image per call)."""
    return PolylineFilter(img, w).response(poly)


# ---------------------------------------------------------------------------
# Line suppression
# ---------------------------------------------------------------------------

def _priority(e: Edge):
    # Higher response first; ties resolved longer-first then lexicographic.
    return (-e.response, -e.length, tuple(np.asarray(e.polyline).ravel()))


def _angular_nms(edges: list[Edge]) -> list[Edge]:
    groups: dict[tuple, Edge] = {}
    for e in sorted(edges, key=_priority):
        x0, y0 = e.start
        x1, y1 = e.end
        key = (e.length, round(x0 + x1, 6), round(y0 + y1, 6))
        if key not in groups:
            groups[key] = e
    return list(groups.values())


def _spatial_nms(edges: list[Edge], w: int) -> list[Edge]:
    out = []
    groups: dict[tuple, list[Edge]] = {}
    for e in edges:
        groups.setdefault((e.length, e.orientation_class, e.direction), []).append(e)
    for (L, cls, D), group in groups.items():
        if len(group) == 1:
            out.extend(group)
            continue
        dvec = np.array([D, L], dtype=np.float64) if cls == "v" else np.array([L, D], dtype=np.float64)
        u = dvec / np.hypot(*dvec)
        nvec = np.array([-u[1], u[0]])
        centers = np.array([(np.asarray(e.polyline[0]) + np.asarray(e.polyline[-1])) / 2 for e in group])
        along = centers @ u
        across = centers @ nvec
        prio = sorted(range(len(group)), key=lambda i: _priority(group[i]))
        rank = np.empty(len(group), dtype=int)
        for r, i in enumerate(prio):
            rank[i] = r
        for i, e in enumerate(group):
            nb = (np.abs(along - along[i]) <= L / 2 + 1e-9) & (np.abs(across - across[i]) <= w / 2 + 1e-9)
            nb[i] = False
            if not (rank[nb] < rank[i]).any():
                out.append(e)
    return out


def _coverage(e: Edge, seg_a: np.ndarray | None, seg_b: np.ndarray | None, tol: float):
    """Fraction of the line's samples within tol of accepted segments, and
    the longest uncovered run (start_index, end_index) in the samples."""
    pts = _sample_polyline(e.polyline)
    if seg_a is None or len(seg_a) == 0:
        return 0.0, None, pts
    covered = _min_dist_to_segments(pts, seg_a, seg_b) <= tol
    frac = float(covered.mean())
    best_len, best_span = 0, None
    start = None
    for i, c in enumerate(np.append(covered, True)):
        if not c and start is None:
            start = i
        elif c and start is not None:
            if i - start > best_len:
                best_len, best_span = i - start, (start, i - 1)
            start = None
    return frac, best_span, pts


def line_nms(edge_set: EdgeSet, threshold_fn, p: SuppressionParams | None = None, w: int = 4,
             response_fn=None) -> EdgeSet:
    """Angular, spatial and inter-level non-maximum suppression for lines.

    ``threshold_fn(L)`` supplies the detection threshold for a length-L
    segment; ``response_fn(polyline)`` re-evaluates the response of the
    uncovered portion of a partially overlapped line before it is retested
    (without it, the parent line's response is reused). Deterministic: ties
    break longer-first, then by endpoint order.
    """
    p = p or SuppressionParams()
    edges = _angular_nms(list(edge_set.edges))
    edges = _spatial_nms(edges, w)

    by_len: dict[float, list[Edge]] = {}
    for e in edges:
        by_len.setdefault(e.length, []).append(e)
    lengths = sorted(by_len, reverse=True)
    accepted: list[Edge] = []
    prev_a = prev_b = None
    for li, L in enumerate(lengths):
        pool: list[Edge] = []
        for e in sorted(by_len[L], key=_priority):
            if li == 0:
                pool.append(e)
                continue
            frac, span, pts = _coverage(e, prev_a, prev_b, p.hausdorff_tol)
            if frac > p.overlap_fraction:
                continue
            if frac == 0.0 or span is None:
                pool.append(e)
                continue
            i0, i1 = span
            new_len = float(np.max(np.abs(pts[i1] - pts[i0]))) if i1 > i0 else 0.0
            if new_len < 1:
                continue
            part_poly = np.array([pts[i0], pts[i1]])
            part_resp = response_fn(part_poly) if response_fn else e.signed_response
            if abs(part_resp) > threshold_fn(new_len):
                trimmed = Edge(
                    polyline=part_poly,
                    length=new_len,
                    signed_response=part_resp,
                    level=e.level,
                    kind=e.kind,
                    orientation_class=e.orientation_class,
                    direction=e.direction,
                    min_sub=e.min_sub,
                    max_sub=e.max_sub,
                    sub_length=e.sub_length,
                    sigma_e=e.sigma_e,
                    mean_intensity=e.mean_intensity,
                    plus_normal=e.plus_normal,
                    trimmed=True,
                )
                pool.append(trimmed)
        accepted.extend(pool)
        if pool:
            prev_a = np.array([e.polyline[0] for e in pool], dtype=np.float64)
            prev_b = np.array([e.polyline[-1] for e in pool], dtype=np.float64)
        else:
            prev_a = prev_b = None
    accepted.sort(key=lambda e: (e.level, _priority(e)))
    return EdgeSet(edges=accepted, provenance=edge_set.provenance, shape=edge_set.shape)


# ---------------------------------------------------------------------------
# Curve suppression
# ---------------------------------------------------------------------------

def _sampled_with_spans(poly: np.ndarray):
    """Unit-spacing samples of a polyline plus each segment's sample span."""
    poly = np.asarray(poly, dtype=np.float64)
    if len(poly) == 2:  # single segment: the common case
        total = float(max(abs(poly[1, 0] - poly[0, 0]), abs(poly[1, 1] - poly[0, 1])))
        n = max(2, int(round(math.hypot(*(poly[1] - poly[0])))) + 1)
        pts = poly[0] + np.linspace(0.0, 1.0, n)[:, None] * (poly[1] - poly[0])
        return pts, [(0, n)]
    segs = np.diff(poly, axis=0)
    seg_len = np.hypot(segs[:, 0], segs[:, 1])
    total = float(seg_len.sum())
    if total == 0:
        return poly[:1], [(0, 1)]
    n = max(2, int(round(total)) + 1)
    t = np.linspace(0.0, total, n)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    pts = np.stack([np.interp(t, cum, poly[:, 0]), np.interp(t, cum, poly[:, 1])], axis=1)
    spans = []
    scale = (n - 1) / total
    for k in range(len(poly) - 1):
        i0 = int(math.floor(cum[k] * scale))
        i1 = int(math.ceil(cum[k + 1] * scale)) + 1
        spans.append((i0, min(i1, n)))
    return pts, spans


def curve_nms(edge_set: EdgeSet, threshold_fn, p: SuppressionParams | None = None,
              response_fn=None) -> EdgeSet:
    """Suppress overlapping curves, top tile level down, descending response.

    A candidate sub-curve overlaps the accepted set when the median distance
    of its unit-spaced samples to accepted samples falls below hausdorff_tol
    (the median-Hausdorff criterion, directed at the candidate: the reverse
    direction is vacuous when a short piece meets a much longer accepted
    curve). Fully overlapped candidates are dropped; partial overlaps keep
    each contiguous clear run that still passes its own length's threshold,
    re-evaluated by ``response_fn(polyline)`` when provided.
    """
    p = p or SuppressionParams()
    tol = p.hausdorff_tol
    order = sorted(
        edge_set.edges,
        key=lambda e: (e.level, -e.response, -e.length, tuple(np.asarray(e.polyline).ravel())),
    )
    accepted: list[Edge] = []
    pool_samples: list[np.ndarray] = []
    union: cKDTree | None = None

    cache: dict[int, tuple] = {}

    def sampled(idx):
        if idx not in cache:
            cache[idx] = _sampled_with_spans(order[idx].polyline)
        return cache[idx]

    def process(idx, dists) -> bool:
        """Handle one candidate given sample distances to the pool.
        Returns True if the accepted pool changed."""
        e = order[idx]
        pts, spans = sampled(idx)
        close = dists < tol
        if not close.any():
            accepted.append(e)
            pool_samples.append(pts)
            return True
        # Median distance below tol == strict majority of samples closer
        # than tol; counted with one cumulative sum over all segment spans.
        cum = np.concatenate([[0], np.cumsum(close)])
        a = np.array([s[0] for s in spans])
        b = np.array([s[1] for s in spans])
        covered = (cum[b] - cum[a]) * 2 > (b - a)
        if covered.all():
            return False
        if not covered.any():
            accepted.append(e)
            pool_samples.append(pts)
            return True
        poly = np.asarray(e.polyline)
        changed = False
        start = None
        for si in range(len(covered) + 1):
            bad = si >= len(covered) or covered[si]
            if not bad and start is None:
                start = si
            elif bad and start is not None:
                seg = poly[start : si + 1]
                start = None
                seg_len = float(np.sum(np.max(np.abs(np.diff(seg, axis=0)), axis=1)))
                if seg_len < 1:
                    continue
                part_resp = response_fn(seg) if response_fn else e.signed_response
                if abs(part_resp) > threshold_fn(seg_len):
                    part = Edge(
                        polyline=seg,
                        length=seg_len,
                        signed_response=part_resp,
                        level=e.level,
                        kind=e.kind,
                        min_sub=e.min_sub,
                        max_sub=e.max_sub,
                        sub_length=e.sub_length,
                        sigma_e=e.sigma_e,
                        mean_intensity=e.mean_intensity,
                        plus_normal=e.plus_normal,
                        trimmed=True,
                    )
                    accepted.append(part)
                    pool_samples.append(_sample_polyline(seg))
                    changed = True
        return changed

    # Batched scan: distances are valid for every candidate processed before
    # the first pool change; rejections never change the pool.
    i = 0
    block = 512
    while i < len(order):
        hi = min(len(order), i + block)
        all_pts = [sampled(k)[0] for k in range(i, hi)]
        sizes = np.array([len(a) for a in all_pts])
        if union is None and pool_samples:
            union = cKDTree(np.concatenate(pool_samples))
        if union is None:
            d = np.full(int(sizes.sum()), np.inf)
        else:
            d = union.query(np.concatenate(all_pts), distance_upper_bound=tol + 1.0)[0]
        offs = np.concatenate([[0], np.cumsum(sizes)])
        advanced = False
        for k in range(i, hi):
            if process(k, d[offs[k - i] : offs[k - i + 1]]):
                union = None  # pool changed; rebuild and re-block
                i = k + 1
                advanced = True
                break
        if not advanced:
            i = hi
    return EdgeSet(edges=accepted, provenance=edge_set.provenance, shape=edge_set.shape)


# ---------------------------------------------------------------------------
# Rasterization
# ---------------------------------------------------------------------------

def _bresenham(x0: int, y0: int, x1: int, y1: int):
    dx = abs(x1 - x0)
    dy = -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    while True:
        yield x0, y0
        if x0 == x1 and y0 == y1:
            return
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def rasterize(edges: EdgeSet | list[Edge], dims: tuple[int, int]) -> np.ndarray:
    """1-pixel-wide boolean edge map from polylines (Bresenham per segment).

    ``dims`` is (height, width); vertices are rounded to the pixel grid and
    out-of-range pixels are clipped.
    """
    h, w = dims
    out = np.zeros((h, w), dtype=bool)
    edge_list = edges.edges if isinstance(edges, EdgeSet) else edges
    for e in edge_list:
        poly = np.rint(np.asarray(e.polyline)).astype(int)
        for k in range(len(poly) - 1):
            for x, y in _bresenham(*poly[k], *poly[k + 1]):
                if 0 <= x < w and 0 <= y < h:
                    out[y, x] = True
    return out
