"""Beam-curve binary tree for curved-edge detection.

The image (side 2^J + 1) is split recursively into tiles: squares split into
two rectangles sharing a column, rectangles into two squares sharing a row,
down to 5 x 5 leaves. Every tile stores, for each pair of boundary points on
different sides, the best-response curve through the tile: straight segments
at the leaves, and at internal tiles either a curve inherited from the child
containing both endpoints or a concatenation of two child curves joined at an
interface point. Responses are half the difference of the curve's two offset
strips (w/2 parallel offset lines per side, each side normalized by its
in-image length), so stitching adds offset integrals and lengths and
re-evaluates the quotient.

Stringent mode scans every interface pixel per endpoint pair (O(N^1.5)
stitch evaluations overall); greedy mode scans only the k interface pixels
whose best incident child-curve responses are largest (O(k N log N)).

All tiles of one level share their geometry, so construction is vectorized
level by level over [tiles, slots, slots] arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .edges import Edge, EdgeSet
from .image import as_image
from .params import DetectorParams
from .thresholds import beamcurve_threshold_array, cct_threshold_array

LEAF_SIDE = 5
_VALUE_CHANNELS = ("sumI", "p_int", "p_len", "p_sq", "m_int", "m_len", "m_sq")
_HEAVY = ("p_int", "p_len", "p_sq", "m_int", "m_len", "m_sq")
# Channels gathered verbatim when a parent inherits a child curve.
_GATHER = ("sumL", "sumI", "msub", "Msub", "msub_len", "Msub_len") + _HEAVY

_SIDE_TANGENT = {0: (1, 0), 1: (1, 0), 2: (0, 1), 3: (0, 1)}
_SIDE_INWARD = {0: (0, 1), 1: (0, -1), 2: (1, 0), 3: (-1, 0)}


def _cross(ax, ay, bx, by):
    return ax * by - ay * bx


# ---------------------------------------------------------------------------
# Slot tables
# ---------------------------------------------------------------------------

def _slot_table(x0, y0, x1, y1):
    """Boundary slots of a tile: sides 0 top, 1 bottom, 2 left, 3 right.

    Corner pixels appear once per incident side, carrying that side's offset
    geometry.
    """
    xs = np.arange(x0, x1 + 1)
    ys = np.arange(y0, y1 + 1)
    pts = np.concatenate(
        [
            np.stack([xs, np.full_like(xs, y0)], 1),
            np.stack([xs, np.full_like(xs, y1)], 1),
            np.stack([np.full_like(ys, x0), ys], 1),
            np.stack([np.full_like(ys, x1), ys], 1),
        ]
    )
    sides = np.concatenate(
        [np.full(len(xs), 0), np.full(len(xs), 1), np.full(len(ys), 2), np.full(len(ys), 3)]
    )
    return pts.astype(np.int64), sides.astype(np.int8)


def _side_slot_indices(w: int, h: int, side: int) -> np.ndarray:
    base = {0: 0, 1: w + 1, 2: 2 * (w + 1), 3: 2 * (w + 1) + h + 1}[side]
    count = (w + 1) if side in (0, 1) else (h + 1)
    return np.arange(base, base + count)


def _pair_offsets(pi, si, pj, sj, w):
    """Offset-line endpoints for the plus side (left of travel pi -> pj).

    Opposite-side pairs translate both endpoints along their (parallel)
    sides; adjacent-side pairs push each endpoint perpendicular to its own
    side, inward vs. outward. Returns (plus_list, minus_list) of endpoint
    pairs for offsets s = 1..w/2.
    """
    d = (pj[0] - pi[0], pj[1] - pi[1])
    if (si, sj) in ((0, 1), (1, 0), (2, 3), (3, 2)):
        t = _SIDE_TANGENT[si]
        sign = 1.0 if _cross(d[0], d[1], t[0], t[1]) > 0 else -1.0
        vi_p = (sign * t[0], sign * t[1])
        vj_p = vi_p
    else:
        vi, vj = _SIDE_INWARD[si], _SIDE_INWARD[sj]
        c = _cross(d[0], d[1], vi[0], vi[1])
        if c == 0:
            c = _cross(d[0], d[1], vj[0], vj[1])
        sign = 1.0 if c > 0 else -1.0
        vi_p = (sign * vi[0], sign * vi[1])
        vj_p = (sign * vj[0], sign * vj[1])
    plus, minus = [], []
    for s in range(1, w // 2 + 1):
        plus.append(
            (
                (pi[0] + s * vi_p[0], pi[1] + s * vi_p[1]),
                (pj[0] + s * vj_p[0], pj[1] + s * vj_p[1]),
            )
        )
        minus.append(
            (
                (pi[0] - s * vi_p[0], pi[1] - s * vi_p[1]),
                (pj[0] - s * vj_p[0], pj[1] - s * vj_p[1]),
            )
        )
    return plus, minus


def _line_samples(pa, pb):
    """Trapezoid samples of the max-norm line integral from pa to pb.

    The dominant coordinate steps through integers, so each sample needs 1-D
    cubic interpolation across it at most.
    """
    dx, dy = pb[0] - pa[0], pb[1] - pa[1]
    L = int(round(max(abs(dx), abs(dy))))
    if L == 0:
        return 0, []
    out = []
    for t in range(L + 1):
        f = t / L
        out.append((pa[0] + dx * f, pa[1] + dy * f, 0.5 if t in (0, L) else 1.0))
    return L, out


def _cubic_taps(c):
    """4-point Lagrange interpolation taps for fractional coordinate c."""
    base = math.floor(c)
    f = c - base
    if f == 0.0:
        return [(base, 1.0)]
    return [
        (base - 1, -f * (f - 1.0) * (f - 2.0) / 6.0),
        (base, (f + 1.0) * (f - 1.0) * (f - 2.0) / 2.0),
        (base + 1, -(f + 1.0) * f * (f - 2.0) / 2.0),
        (base + 2, (f + 1.0) * f * (f - 1.0) / 6.0),
    ]


class _LeafGeometry:
    """Canonical 5x5-tile geometry compiled to a sparse evaluation operator.

    Rows of W are (ordered pair, channel); columns are unique interpolation
    samples (source image, position, validity flag). Evaluating all leaf
    tiles of an image is one sparse-dense product.
    """

    _cache: dict[int, "_LeafGeometry"] = {}

    def __init__(self, w: int):
        self.w = w
        self.pts, self.sides = _slot_table(0, 0, LEAF_SIDE - 1, LEAF_SIDE - 1)
        B = len(self.pts)
        self.B = B
        self.pairs = []  # (i, j) ordered, valid
        for i in range(B):
            for j in range(B):
                if i == j or self.sides[i] == self.sides[j]:
                    continue
                if (self.pts[i] == self.pts[j]).all():
                    continue
                self.pairs.append((i, j))
        self.sumL = np.zeros(len(self.pairs))

        key_index: dict[tuple, int] = {}
        self.keys: list[tuple] = []
        rows, cols, vals = [], [], []

        def key_id(src, x, y, valid_needed):
            k = (src, round(float(x), 9), round(float(y), 9), valid_needed)
            if k not in key_index:
                key_index[k] = len(self.keys)
                self.keys.append(k)
            return key_index[k]

        def add_line(row, src_val, src_len, pa, pb, need_valid):
            L, samples = _line_samples(pa, pb)
            for x, y, wt in samples:
                rows.append(row)
                cols.append(key_id(src_val, x, y, need_valid))
                vals.append(wt)
                if src_len is not None:
                    rows.append(row + 1)
                    cols.append(key_id("ones", x, y, True))
                    vals.append(wt)
            return L

        nch = len(_VALUE_CHANNELS)
        for p_idx, (i, j) in enumerate(self.pairs):
            base = p_idx * nch
            pi = tuple(self.pts[i])
            pj = tuple(self.pts[j])
            self.sumL[p_idx] = add_line(base + 0, "img", None, pi, pj, False)
            plus, minus = _pair_offsets(pi, self.sides[i], pj, self.sides[j], w)
            for lines, off in ((plus, 1), (minus, 4)):
                for pa, pb in lines:
                    add_line(base + off, "img", "len", pa, pb, True)
                    add_line(base + off + 2, "img2", None, pa, pb, True)

        self.W = sparse.csr_matrix(
            (vals, (rows, cols)), shape=(len(self.pairs) * nch, len(self.keys))
        )
        self.pair_i = np.array([i for i, _ in self.pairs])
        self.pair_j = np.array([j for _, j in self.pairs])

    @classmethod
    def get(cls, w: int) -> "_LeafGeometry":
        if w not in cls._cache:
            cls._cache[w] = cls(w)
        return cls._cache[w]

    def evaluate(self, img: np.ndarray):
        """Channel arrays [TY, TX, B, B] for every 5x5 leaf tile of img."""
        n_y, n_x = img.shape
        step = LEAF_SIDE - 1
        TY = (n_y - 1) // step
        TX = (n_x - 1) // step
        P = self.w // 2 + 3
        pad = np.pad(img, P, mode="edge")
        pad2 = pad * pad
        oy = step * np.arange(TY)
        ox = step * np.arange(TX)

        T = np.empty((len(self.keys), TY * TX))
        for kid, (src, x, y, need_valid) in enumerate(self.keys):
            if src == "ones":
                acc = np.ones((TY, TX))
            else:
                acc = np.zeros((TY, TX))
                base_img = pad if src == "img" else pad2
                for cy, wy in _cubic_taps(y):
                    row_view = base_img[P + cy : P + cy + step * (TY - 1) + 1 : step, :]
                    for cx, wx in _cubic_taps(x):
                        acc += (wy * wx) * row_view[
                            :, P + cx : P + cx + step * (TX - 1) + 1 : step
                        ]
            if need_valid:
                vy = (oy + y >= -1e-9) & (oy + y <= n_y - 1 + 1e-9)
                vx = (ox + x >= -1e-9) & (ox + x <= n_x - 1 + 1e-9)
                acc = acc * np.outer(vy, vx)
            T[kid] = acc.ravel()

        out = self.W @ T  # [pairs * nch, tiles]
        nch = len(_VALUE_CHANNELS)
        npair = len(self.pairs)
        per = out.reshape(npair, nch, TY * TX).transpose(2, 0, 1)
        B = self.B
        chans = {}
        for c, name in enumerate(_VALUE_CHANNELS):
            arr = np.full((TY * TX, B, B), np.nan)
            arr[:, self.pair_i, self.pair_j] = per[:, :, c]
            chans[name] = arr.reshape(TY, TX, B, B)
        sl = np.full((TY * TX, B, B), np.nan)
        sl[:, self.pair_i, self.pair_j] = self.sumL
        chans["sumL"] = sl.reshape(TY, TX, B, B)
        return chans


# ---------------------------------------------------------------------------
# Level geometry (shared by all tiles of one level)
# ---------------------------------------------------------------------------

class _LevelGeom:
    def __init__(self, w_span: int, h_span: int):
        self.w_span = w_span  # x1 - x0
        self.h_span = h_span
        self.pts, self.sides = _slot_table(0, 0, w_span, h_span)
        self.B = len(self.pts)
        self.invalid = (self.sides[:, None] == self.sides[None, :]) | (
            (self.pts[:, None, :] == self.pts[None, :, :]).all(-1)
        )
        self.is_leaf = max(w_span, h_span) <= LEAF_SIDE - 1
        if self.is_leaf:
            return
        if w_span >= h_span:  # column split
            xm = w_span // 2
            self.c1_rect = (0, 0, xm, h_span)
            self.c2_rect = (xm, 0, w_span, h_span)
            self.c2_shift = (xm, 0)
            if_side1, if_side2 = 3, 2
        else:  # row split
            ym = h_span // 2
            self.c1_rect = (0, 0, w_span, ym)
            self.c2_rect = (0, ym, w_span, h_span)
            self.c2_shift = (0, ym)
            if_side1, if_side2 = 1, 0
        cw1 = self.c1_rect[2] - self.c1_rect[0]
        ch1 = self.c1_rect[3] - self.c1_rect[1]
        self.if1 = _side_slot_indices(cw1, ch1, if_side1)
        self.if2 = _side_slot_indices(cw1, ch1, if_side2)  # children congruent
        self.m1 = self._slot_map(self.c1_rect)
        self.m2 = self._slot_map(self.c2_rect)

    def _slot_map(self, crect) -> np.ndarray:
        cx0, cy0, cx1, cy1 = crect
        cw, chh = cx1 - cx0, cy1 - cy0
        offs = {0: 0, 1: cw + 1, 2: 2 * (cw + 1), 3: 2 * (cw + 1) + chh + 1}
        lines = {0: ("y", cy0), 1: ("y", cy1), 2: ("x", cx0), 3: ("x", cx1)}
        m = np.full(self.B, -1, dtype=np.int64)
        for k in range(self.B):
            s = int(self.sides[k])
            x, y = int(self.pts[k, 0]), int(self.pts[k, 1])
            axis, val = lines[s]
            if (y != val) if axis == "y" else (x != val):
                continue
            if not (cx0 <= x <= cx1 and cy0 <= y <= cy1):
                continue
            m[k] = offs[s] + ((x - cx0) if s in (0, 1) else (y - cy0))
        return m


# ---------------------------------------------------------------------------
# Tiles and the tree
# ---------------------------------------------------------------------------

@dataclass
class Tile:
    """One tile: a view into its level's batched channel arrays."""

    x0: int
    y0: int
    x1: int
    y1: int
    level: int
    index: int
    geom: _LevelGeom
    channels: dict = field(default_factory=dict)
    bestp3: np.ndarray | None = None
    route_c1: np.ndarray | None = None
    children: tuple["Tile", "Tile"] | None = None
    new_mask: np.ndarray | None = None

    @property
    def rect(self):
        return (self.x0, self.y0, self.x1, self.y1)

    @property
    def is_leaf(self) -> bool:
        return self.children is None

    @property
    def pts(self) -> np.ndarray:
        return self.geom.pts + np.array([self.x0, self.y0])

    @property
    def sides(self) -> np.ndarray:
        return self.geom.sides

    @property
    def cmap(self):
        return (self.geom.m1, self.geom.m2)

    @property
    def if_slots(self):
        return (self.geom.if1, self.geom.if2)

    def valid_mask(self) -> np.ndarray:
        return np.isfinite(self.channels["r_signed"])


@dataclass
class BeamTree:
    root: Tile
    shape: tuple[int, int]            # padded shape the tree was built on
    original_shape: tuple[int, int]
    params: DetectorParams
    mode: str
    tiles: list[Tile] = field(default_factory=list)
    stitch_evals: int = 0
    depth: int = 0
    _poly_cache: dict = field(default_factory=dict, repr=False)

    def tiles_at(self, level: int) -> list[Tile]:
        return [t for t in self.tiles if t.level == level]

    def polyline(self, tile: Tile, i: int, j: int) -> list[tuple[int, int]]:
        """Vertices of the stored curve for slot pair (i, j), from i to j.

        Sub-curves are shared between overlapping candidates, so results are
        memoized per slot pair.
        """
        key = (tile.level, tile.index, i, j)
        cache = self._poly_cache
        hit = cache.get(key)
        if hit is not None:
            return list(hit)
        code = int(tile.bestp3[i, j])
        if code == -9:
            raise KeyError("no curve stored for this slot pair")
        if tile.is_leaf or code == -3:
            pts = tile.pts
            out = [tuple(pts[i]), tuple(pts[j])]
        else:
            c1, c2 = tile.children
            m1, m2 = tile.cmap
            if code == -1:
                out = self.polyline(c1, int(m1[i]), int(m1[j]))
            elif code == -2:
                out = self.polyline(c2, int(m2[i]), int(m2[j]))
            elif not tile.route_c1[i, j]:
                out = list(reversed(self.polyline(tile, j, i)))
            else:
                if1, if2 = tile.if_slots
                left = self.polyline(c1, int(m1[i]), int(if1[code]))
                right = self.polyline(c2, int(if2[code]), int(m2[j]))
                out = left + right[1:]
        cache[key] = tuple(out)
        return out


def _finish_level(ch: dict, invalid: np.ndarray):
    """Derive responses and side spreads; mask structurally absent pairs.

    The response is half the difference of the side means, each side
    normalized by its own in-image offset length: DC-free even for quadrangle
    shapes and border-clipped offsets. A curve whose offsets survive on one
    side only carries no edge evidence itself (response 0) but remains a
    valid piece of longer curves.
    """
    with np.errstate(invalid="ignore", divide="ignore"):
        both = (ch["p_len"] > 0) & (ch["m_len"] > 0)
        some = (ch["p_len"] + ch["m_len"]) > 0
        r = np.where(
            both,
            0.5 * (ch["p_int"] / ch["p_len"] - ch["m_int"] / ch["m_len"]),
            np.where(some, 0.0, np.nan),
        )
        var_p = np.where(ch["p_len"] > 0, ch["p_sq"] / ch["p_len"] - (ch["p_int"] / ch["p_len"]) ** 2, np.nan)
        var_m = np.where(ch["m_len"] > 0, ch["m_sq"] / ch["m_len"] - (ch["m_int"] / ch["m_len"]) ** 2, np.nan)
        both_v = np.isfinite(var_p) & np.isfinite(var_m)
        var = np.where(both_v, 0.5 * (var_p + var_m), np.where(np.isfinite(var_p), var_p, var_m))
        sig = np.sqrt(np.clip(var, 0.0, None))
    r[:, invalid] = np.nan
    ch["r_signed"] = r
    ch["sigma_e"] = sig


def _neg_inf(x):
    return np.where(np.isfinite(x), x, -np.inf)


def _stitch_level(ch_child: dict, child_best: np.ndarray, geom: _LevelGeom,
                  mode: str, k: int, lmin: int, counters: dict):
    """Build one level's [T, B, B] channels from its children's [2T, Bc, Bc].

    Children of tile t are rows 2t (child 1) and 2t+1 (child 2).
    """
    T2 = next(iter(ch_child.values())).shape[0]
    T = T2 // 2
    B = geom.B
    m1, m2, if1, if2 = geom.m1, geom.m2, geom.if1, geom.if2
    M = len(if1)
    C1 = {n: a[0::2] for n, a in ch_child.items()}
    C2 = {n: a[1::2] for n, a in ch_child.items()}

    chans = {name: np.full((T, B, B), np.nan) for name in _GATHER}
    bestR = np.full((T, B, B), -np.inf)
    bestcode = np.full((T, B, B), -9, dtype=np.int32)
    route = np.zeros((T, B, B), dtype=bool)

    # Inherit curves wholly contained in one child.
    for code, Cc, m in ((-1, C1, m1), (-2, C2, m2)):
        sel = np.nonzero(m >= 0)[0]
        if len(sel) == 0:
            continue
        cs = m[sel]
        gidx = (slice(None), cs[:, None], cs[None, :])
        pidx = (slice(None), sel[:, None], sel[None, :])
        cand = _neg_inf(np.abs(Cc["r_signed"][gidx]))
        cur = bestR[pidx]
        upd = cand > cur
        if upd.any():
            for name in _GATHER:
                blk = chans[name][pidx]
                blk[upd] = Cc[name][gidx][upd]
                chans[name][pidx] = blk
            cur[upd] = cand[upd]
            bestR[pidx] = cur
            blk = bestcode[pidx]
            blk[upd] = code
            bestcode[pidx] = blk

    # Stitch across the interface.
    rows = np.nonzero(m1 >= 0)[0]
    cols = np.nonzero(m2 >= 0)[0]
    if len(rows) and len(cols) and M:
        aidx = (slice(None), m1[rows][:, None], if1[None, :])
        bidx = (slice(None), if2[:, None], m2[cols][None, :])
        A = {name: C1[name][aidx] for name in _GATHER + ("r_signed",)}
        Bc = {name: C2[name][bidx] for name in _GATHER + ("r_signed",)}

        if mode == "greedy" and k < M:
            s1 = _neg_inf(np.abs(C1["r_signed"][:, :, if1])).max(axis=1)  # [T, M]
            s2 = _neg_inf(np.abs(C2["r_signed"][:, if2, :])).max(axis=2)
            score = np.maximum(s1, s2)
            # Stable top-k per tile, scanned in increasing interface order.
            order = np.argsort(-score, axis=1, kind="stable")[:, :k]
            p3_per_tile = np.sort(order, axis=1)  # [T, k]
            n_p3 = k
        else:
            p3_per_tile = None
            n_p3 = M

        R, C = len(rows), len(cols)
        pidx = (slice(None), rows[:, None], cols[None, :])
        blkR = bestR[pidx]
        blkidx = np.full((T, R, C), -9, dtype=np.int32)
        # Scan interface points in chunks; strict-greater updates with
        # first-occurrence argmax reproduce the sequential smallest-p3
        # tie-break exactly.
        chunk = max(1, int(6_000_000 // max(1, T * R * C)))
        with np.errstate(invalid="ignore", divide="ignore"):
            for c0 in range(0, n_p3, chunk):
                c1e = min(n_p3, c0 + chunk)
                if p3_per_tile is None:
                    ids_t = None

                    def ga(name):
                        return A[name][:, :, c0:c1e, None]  # [T, R, c, 1]

                    def gb(name):
                        return Bc[name][:, None, c0:c1e, :]  # [T, 1, c, C]

                else:
                    ids_t = p3_per_tile[:, c0:c1e]  # [T, c]

                    def ga(name):
                        g = np.take_along_axis(A[name], ids_t[:, None, :], axis=2)
                        return g[:, :, :, None]

                    def gb(name):
                        g = np.take_along_axis(Bc[name], ids_t[:, :, None], axis=1)
                        return g[:, None, :, :]

                cand = np.abs(
                    0.5
                    * (
                        (ga("p_int") + gb("p_int")) / (ga("p_len") + gb("p_len"))
                        - (ga("m_int") + gb("m_int")) / (ga("m_len") + gb("m_len"))
                    )
                )
                cand = np.where(np.isfinite(cand), cand, -np.inf)
                cmax = cand.max(axis=2)
                carg = cand.argmax(axis=2)  # [T, R, C] index into the chunk
                if ids_t is None:
                    cids = (c0 + carg).astype(np.int32)
                else:
                    cids = np.take_along_axis(ids_t, carg.reshape(T, -1), axis=1)
                    cids = cids.reshape(T, R, C).astype(np.int32)
                upd = cmax > blkR
                if upd.any():
                    blkR[upd] = cmax[upd]
                    blkidx[upd] = cids[upd]
        counters["stitch_evals"] += T * R * C * n_p3

        st = blkidx >= 0
        if st.any():
            p3b = np.clip(blkidx, 0, None)
            tsel = np.arange(T)[:, None, None]
            ar = np.arange(R)[None, :, None]
            ac = np.arange(C)[None, None, :]
            ga = (tsel, ar, p3b)
            gb = (tsel, p3b, ac)
            for name in ("sumL", "sumI") + _HEAVY:
                stitched = A[name][ga] + Bc[name][gb]
                blk = chans[name][pidx]
                blk[st] = stitched[st]
                chans[name][pidx] = blk
            rA = A["r_signed"][ga]
            rB = Bc["r_signed"][gb]
            lA = A["sumL"][ga]
            lB = Bc["sumL"][gb]
            # Sub-edge extrema: the two pieces always, plus their own tracked
            # sub-edges while those are at least lmin long.
            deepA = lA >= 2 * lmin
            deepB = lB >= 2 * lmin
            m_vals = [rA, rB, np.where(deepA, A["msub"][ga], np.inf), np.where(deepB, Bc["msub"][gb], np.inf)]
            M_vals = [rA, rB, np.where(deepA, A["Msub"][ga], -np.inf), np.where(deepB, Bc["Msub"][gb], -np.inf)]
            lens = [lA, lB, A["msub_len"][ga], Bc["msub_len"][gb]]
            Mlens = [lA, lB, A["Msub_len"][ga], Bc["Msub_len"][gb]]
            mv, ml = m_vals[0], lens[0]
            Mv, Ml = M_vals[0], Mlens[0]
            for t in range(1, 4):
                sel = m_vals[t] < mv
                mv = np.where(sel, m_vals[t], mv)
                ml = np.where(sel, lens[t], ml)
                sel = M_vals[t] > Mv
                Mv = np.where(sel, M_vals[t], Mv)
                Ml = np.where(sel, Mlens[t], Ml)
            for name, val in (
                ("msub", mv),
                ("Msub", Mv),
                ("msub_len", ml),
                ("Msub_len", Ml),
            ):
                blk = chans[name][pidx]
                blk[st] = val[st]
                chans[name][pidx] = blk
            blk = bestcode[pidx]
            blk[st] = blkidx[st]
            bestcode[pidx] = blk
            blkroute = route[pidx]
            blkroute[st] = True
            route[pidx] = blkroute
        bestR[pidx] = blkR

    # A pair may be reachable with either endpoint routed through child 1;
    # keep the better orientation and mirror for coherence.
    bT = bestR.transpose(0, 2, 1).copy()
    pull = bT > bestR
    if pull.any():
        snap = {name: chans[name].transpose(0, 2, 1).copy() for name in _GATHER}
        for name in ("sumL", "sumI"):
            chans[name][pull] = snap[name][pull]
        for a, b in (("p_int", "m_int"), ("p_len", "m_len"), ("p_sq", "m_sq")):
            va, vb = snap[a][pull], snap[b][pull]
            chans[a][pull] = vb
            chans[b][pull] = va
        ms, Ms = snap["msub"][pull], snap["Msub"][pull]
        chans["msub"][pull] = -Ms
        chans["Msub"][pull] = -ms
        ml, Ml = snap["msub_len"][pull], snap["Msub_len"][pull]
        chans["msub_len"][pull] = Ml
        chans["Msub_len"][pull] = ml
        bestcode[pull] = bestcode.transpose(0, 2, 1).copy()[pull]
        route[pull] = ~route.transpose(0, 2, 1).copy()[pull]
        bestR[pull] = bT[pull]

    _finish_level(chans, geom.invalid)
    return chans, bestcode, route


def _next_valid_side(n: int) -> int:
    j = 2
    while (1 << j) + 1 < n:
        j += 1
    return (1 << j) + 1


def build_beam_tree(
    img,
    params: DetectorParams | None = None,
    mode: str = "stringent",
    on_tile=None,
    keep_heavy: bool = True,
) -> BeamTree:
    """Build the beam-curve tree of an image.

    Images whose side is not 2^J + 1 (or not square) are mirror-padded on the
    bottom/right to the next valid size; detections in the margin are
    discarded by detect_curves. ``on_tile(tile, channels, new_mask)`` runs as
    each level completes (heavy channels still present); keep_heavy=False
    drops the offset accumulators of consumed levels, roughly halving memory.
    """
    img = as_image(img)
    params = params or DetectorParams()
    if mode not in ("stringent", "greedy"):
        raise ValueError("mode must be 'stringent' or 'greedy'")
    h0, w0 = img.shape
    if min(h0, w0) < LEAF_SIDE:
        raise ValueError(f"image must be at least {LEAF_SIDE}x{LEAF_SIDE}")
    n = _next_valid_side(max(h0, w0))
    if (h0, w0) != (n, n):
        img = np.pad(img, ((0, n - h0), (0, n - w0)), mode="symmetric")

    # Level rects, ordered so children of tile t at level j are tiles
    # (2t, 2t+1) at level j+1.
    level_rects = [[(0, 0, n - 1, n - 1)]]
    while True:
        cur = level_rects[-1]
        x0, y0, x1, y1 = cur[0]
        if max(x1 - x0, y1 - y0) <= LEAF_SIDE - 1:
            break
        nxt = []
        for (a, b, c, d) in cur:
            if c - a >= d - b:
                xm = (a + c) // 2
                nxt.extend([(a, b, xm, d), (xm, b, c, d)])
            else:
                ym = (b + d) // 2
                nxt.extend([(a, b, c, ym), (a, ym, c, d)])
        level_rects.append(nxt)
    depth = len(level_rects) - 1
    geoms = [
        _LevelGeom(r[0][2] - r[0][0], r[0][3] - r[0][1]) for r in [lv for lv in level_rects]
    ]

    geom_leaf = _LeafGeometry.get(params.w)
    leaf_by_grid = geom_leaf.evaluate(img)
    step = LEAF_SIDE - 1
    leaf_rects = level_rects[depth]
    ty = np.array([r[1] // step for r in leaf_rects])
    tx = np.array([r[0] // step for r in leaf_rects])
    ch_level = {name: np.ascontiguousarray(leaf_by_grid[name][ty, tx]) for name in ("sumL",) + _VALUE_CHANNELS}
    del leaf_by_grid
    _finish_level(ch_level, geoms[depth].invalid)
    r = ch_level["r_signed"]
    ch_level["msub"] = r.copy()
    ch_level["Msub"] = r.copy()
    ch_level["msub_len"] = ch_level["sumL"].copy()
    ch_level["Msub_len"] = ch_level["sumL"].copy()
    best_level = np.full(r.shape, -3, dtype=np.int32)
    route_level = None

    counters = {"stitch_evals": 0}
    per_level = {depth: (ch_level, best_level, route_level)}
    for j in range(depth - 1, -1, -1):
        ch, best, route = _stitch_level(
            per_level[j + 1][0], per_level[j + 1][1], geoms[j], mode, params.k,
            params.cct_min_length, counters,
        )
        per_level[j] = (ch, best, route)

    # Materialize tiles (views into level arrays), children links, callbacks.
    tiles_by_level: list[list[Tile]] = []
    all_tiles: list[Tile] = []
    for j, rects in enumerate(level_rects):
        ch, best, route = per_level[j]
        lvl_tiles = []
        for t, (a, b, c, d) in enumerate(rects):
            tile = Tile(a, b, c, d, j, t, geoms[j])
            tile.channels = {name: arr[t] for name, arr in ch.items()}
            tile.bestp3 = best[t]
            tile.route_c1 = route[t] if route is not None else None
            if j == depth:
                tile.new_mask = np.triu(np.isfinite(ch["r_signed"][t]), 1)
            else:
                tile.new_mask = np.triu(np.isfinite(ch["r_signed"][t]) & (best[t] >= 0), 1)
            lvl_tiles.append(tile)
        tiles_by_level.append(lvl_tiles)
        all_tiles.extend(lvl_tiles)
    for j in range(depth):
        for t, tile in enumerate(tiles_by_level[j]):
            tile.children = (tiles_by_level[j + 1][2 * t], tiles_by_level[j + 1][2 * t + 1])

    if on_tile is not None:
        for j in range(depth, -1, -1):
            for tile in tiles_by_level[j]:
                on_tile(tile, tile.channels, tile.new_mask)
    if not keep_heavy:
        for j in range(depth + 1):
            ch = per_level[j][0]
            for name in _HEAVY:
                ch.pop(name, None)
            for tile in tiles_by_level[j]:
                for name in _HEAVY:
                    tile.channels.pop(name, None)

    tree = BeamTree(
        root=tiles_by_level[0][0],
        shape=img.shape,
        original_shape=(h0, w0),
        params=params,
        mode=mode,
        tiles=all_tiles,
        stitch_evals=counters["stitch_evals"],
        depth=depth,
    )
    return tree


# ---------------------------------------------------------------------------
# Scalar curve records (reference semantics, used for testing and output)
# ---------------------------------------------------------------------------

@dataclass
class BeamCurve:
    """One beam curve with its stitched accumulators.

    plus_* / minus_* aggregate the w/2 offset lines on each side: total
    in-image length, integral of I and integral of I^2. The response is half
    the difference of the two side means.
    """

    p1: tuple[int, int]
    p2: tuple[int, int]
    polyline: list
    L: float
    F: float
    plus_int: float = 0.0
    plus_len: float = 0.0
    plus_sq: float = 0.0
    minus_int: float = 0.0
    minus_len: float = 0.0
    minus_sq: float = 0.0
    min_sub: float = 0.0
    max_sub: float = 0.0
    min_sub_len: float = 0.0
    max_sub_len: float = 0.0

    @property
    def r_signed(self) -> float:
        if self.plus_len <= 0 or self.minus_len <= 0:
            return 0.0 if self.plus_len + self.minus_len > 0 else math.nan
        return 0.5 * (self.plus_int / self.plus_len - self.minus_int / self.minus_len)

    @property
    def R(self) -> float:
        return abs(self.r_signed)


def stitch(g1: BeamCurve, g2: BeamCurve, w: int, cct_min_length: int = 8) -> BeamCurve:
    """Concatenate two curves sharing an endpoint.

    Lengths add exactly; means combine length-weighted, so the junction point
    keeps unit trapezoid weight. Offset accumulators add per side and the
    response is re-evaluated from the stitched aggregates. Sub-edge extrema
    cover the two pieces plus their tracked sub-edges of length at least
    cct_min_length. A zero-length curve is the identity.
    """
    if g1.L == 0:
        return g2
    if g2.L == 0:
        return g1
    if tuple(g1.p2) != tuple(g2.p1):
        raise ValueError("curves do not share an endpoint")
    L = g1.L + g2.L
    F = (g1.L * g1.F + g2.L * g2.F) / L
    cand_min = [(g1.r_signed, g1.L), (g2.r_signed, g2.L)]
    cand_max = list(cand_min)
    for g in (g1, g2):
        if g.L >= 2 * cct_min_length:
            cand_min.append((g.min_sub, g.min_sub_len))
            cand_max.append((g.max_sub, g.max_sub_len))
    min_sub, min_sub_len = min(cand_min, key=lambda t: t[0])
    max_sub, max_sub_len = max(cand_max, key=lambda t: t[0])
    return BeamCurve(
        p1=g1.p1,
        p2=g2.p2,
        polyline=list(g1.polyline) + list(g2.polyline)[1:],
        L=L,
        F=F,
        plus_int=g1.plus_int + g2.plus_int,
        plus_len=g1.plus_len + g2.plus_len,
        plus_sq=g1.plus_sq + g2.plus_sq,
        minus_int=g1.minus_int + g2.minus_int,
        minus_len=g1.minus_len + g2.minus_len,
        minus_sq=g1.minus_sq + g2.minus_sq,
        min_sub=min_sub,
        max_sub=max_sub,
        min_sub_len=min_sub_len,
        max_sub_len=max_sub_len,
    )


def bottom_level(img, w: int = 4, origin: tuple[int, int] = (0, 0)) -> list[BeamCurve]:
    """All straight beam curves of the 5x5 tile at ``origin``.

    One curve per ordered pair of boundary points on different sides (corner
    pixels belong to both incident sides). Offset lines may leave the tile;
    parts outside the image are dropped from both integral and normalizer.
    """
    img = as_image(img)
    ox, oy = origin
    if not (0 <= ox <= img.shape[1] - LEAF_SIDE and 0 <= oy <= img.shape[0] - LEAF_SIDE):
        raise ValueError("tile does not fit in the image")
    if oy % (LEAF_SIDE - 1) or ox % (LEAF_SIDE - 1):
        raise ValueError("origin must be aligned to the 4-pixel leaf grid")
    geom = _LeafGeometry.get(w)
    chans = geom.evaluate(img)
    ty, tx = oy // (LEAF_SIDE - 1), ox // (LEAF_SIDE - 1)
    out = []
    for i, j in geom.pairs:
        pi = (int(geom.pts[i, 0]) + ox, int(geom.pts[i, 1]) + oy)
        pj = (int(geom.pts[j, 0]) + ox, int(geom.pts[j, 1]) + oy)
        get = lambda name: float(chans[name][ty, tx, i, j])
        L = get("sumL")
        curve = BeamCurve(
            p1=pi,
            p2=pj,
            polyline=[pi, pj],
            L=L,
            F=get("sumI") / L,
            plus_int=get("p_int"),
            plus_len=get("p_len"),
            plus_sq=get("p_sq"),
            minus_int=get("m_int"),
            minus_len=get("m_len"),
            minus_sq=get("m_sq"),
        )
        curve.min_sub = curve.max_sub = curve.r_signed
        curve.min_sub_len = curve.max_sub_len = L
        out.append(curve)
    return out


def tree_curve(tree: BeamTree, tile: Tile, i: int, j: int) -> BeamCurve:
    """Materialize the stored curve for a slot pair as a BeamCurve record."""
    ch = tile.channels
    if "p_int" not in ch:
        raise ValueError("tree was built with keep_heavy=False")
    L = float(ch["sumL"][i, j])
    poly = tree.polyline(tile, i, j)
    pts = tile.pts
    return BeamCurve(
        p1=tuple(pts[i]),
        p2=tuple(pts[j]),
        polyline=poly,
        L=L,
        F=float(ch["sumI"][i, j]) / L,
        plus_int=float(ch["p_int"][i, j]),
        plus_len=float(ch["p_len"][i, j]),
        plus_sq=float(ch["p_sq"][i, j]),
        minus_int=float(ch["m_int"][i, j]),
        minus_len=float(ch["m_len"][i, j]),
        minus_sq=float(ch["m_sq"][i, j]),
        min_sub=float(ch["msub"][i, j]),
        max_sub=float(ch["Msub"][i, j]),
        min_sub_len=float(ch["msub_len"][i, j]),
        max_sub_len=float(ch["Msub_len"][i, j]),
    )


# ---------------------------------------------------------------------------
# Detection and audits
# ---------------------------------------------------------------------------

def detect_curves(tree: BeamTree, params: DetectorParams | None = None) -> EdgeSet:
    """Threshold all stored curves and apply the consistent-contrast test.

    Candidates must exceed the length-dependent beam-curve threshold (family
    size 6N * 2^(beta L) for the padded pixel count N) and their weakest
    same-signed sub-curve must clear the consistent-contrast threshold.
    Curves touching the mirror-padding margin are discarded. Pre-suppression.
    """
    params = params or tree.params
    tp = params.thresholds
    n_pixels = tree.shape[0] * tree.shape[1]
    h0, w0 = tree.original_shape
    out = EdgeSet(provenance="curves", shape=tree.original_shape)
    for tile in tree.tiles:
        mask = tile.new_mask
        if mask is None or not mask.any():
            continue
        ch = tile.channels
        r = ch["r_signed"]
        R = np.abs(r)
        L = ch["sumL"]
        if params.sigma == 0:
            pass1 = mask & (R > 0)
        else:
            T = beamcurve_threshold_array(L, n_pixels, tp)
            pass1 = mask & (R > T)
        if not pass1.any():
            continue
        ii, jj = np.nonzero(pass1)
        rv = r[ii, jj]
        sub = np.where(rv > 0, ch["msub"][ii, jj], ch["Msub"][ii, jj])
        ell = np.maximum(np.where(rv > 0, ch["msub_len"][ii, jj], ch["Msub_len"][ii, jj]), 1.0)
        if params.sigma == 0:
            b = 0.5 * np.abs(rv)
        else:
            b = cct_threshold_array(np.abs(rv), ch["sigma_e"][ii, jj], params.sigma, params.w, ell)
        keep = np.where(rv > 0, sub > b, sub < -b)
        for idx in range(len(ii)):
            if not keep[idx]:
                continue
            i, j = int(ii[idx]), int(jj[idx])
            poly = np.asarray(tree.polyline(tile, i, j), dtype=np.float64)
            if (poly[:, 0] > w0 - 1).any() or (poly[:, 1] > h0 - 1).any():
                continue  # padding margin
            d = poly[-1] - poly[0]
            nrm = math.hypot(d[0], d[1]) or 1.0
            out.edges.append(
                Edge(
                    polyline=poly,
                    length=float(L[i, j]),
                    signed_response=float(r[i, j]),
                    level=tile.level,
                    kind="curve",
                    min_sub=float(ch["msub"][i, j]),
                    max_sub=float(ch["Msub"][i, j]),
                    sub_length=float(ell[idx]),
                    sigma_e=float(ch["sigma_e"][i, j]),
                    mean_intensity=float(ch["sumI"][i, j] / L[i, j]),
                    plus_normal=(-d[1] / nrm, d[0] / nrm),
                )
            )
    return out


def curve_count_audit(tree: BeamTree) -> list[dict]:
    """Stored-curve counts per level (unordered valid pairs, inherited included)."""
    rows = []
    n_pixels = tree.shape[0] * tree.shape[1]
    for level in range(tree.depth + 1):
        tiles = tree.tiles_at(level)
        count = sum(int(np.triu(t.valid_mask(), 1).sum()) for t in tiles)
        rows.append({"level": level, "tiles": len(tiles), "count": count, "six_n": 6 * n_pixels})
    return rows
