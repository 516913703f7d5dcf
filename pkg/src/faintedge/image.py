"""Grayscale image substrate: file I/O, synthetic patterns, noise injection.

Images are plain 2-D float64 numpy arrays (row-major, ``img[y, x]``). All
functions treat their inputs as immutable and return fresh arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage


class FormatError(ValueError):
    """Raised for malformed image files; carries the offending byte offset."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


@dataclass(frozen=True)
class NoiseSpec:
    """Additive i.i.d. zero-mean Gaussian noise, reproducible from a seed."""

    sigma: float
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")


@dataclass(frozen=True)
class PatternSpec:
    """Synthetic binary test pattern: side length and foreground contrast."""

    side: int = 129
    contrast: float = 1.0


def as_image(arr) -> np.ndarray:
    """Validate and convert input to a finite 2-D float64 image."""
    img = np.asarray(arr, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise ValueError("image must be a nonempty 2-D array")
    if not np.isfinite(img).all():
        raise ValueError("image intensities must be finite")
    return img


# ---------------------------------------------------------------------------
# PGM (P2 / P5) codec
# ---------------------------------------------------------------------------

def _pgm_tokens(data: bytes):
    """Yield (token, offset) pairs from a PGM header, skipping comments."""
    i = 0
    n = len(data)
    while i < n:
        c = data[i : i + 1]
        if c.isspace():
            i += 1
        elif c == b"#":
            while i < n and data[i : i + 1] != b"\n":
                i += 1
        else:
            start = i
            while i < n and not data[i : i + 1].isspace() and data[i : i + 1] != b"#":
                i += 1
            yield data[start:i], start, i


def _load_pgm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    if len(data) == 0:
        raise FormatError(f"{path}: empty file", 0)
    tokens = _pgm_tokens(data)

    def next_token(what):
        try:
            return next(tokens)
        except StopIteration:
            raise FormatError(f"{path}: truncated header, missing {what}", len(data)) from None

    magic, off, _ = next_token("magic number")
    if magic not in (b"P2", b"P5"):
        raise FormatError(f"{path}: not a PGM file (magic {magic!r})", off)
    dims = []
    for what in ("width", "height", "maxval"):
        tok, off, end = next_token(what)
        try:
            val = int(tok)
        except ValueError:
            raise FormatError(f"{path}: non-numeric {what} {tok!r}", off) from None
        if val <= 0:
            raise FormatError(f"{path}: {what} must be positive, got {val}", off)
        dims.append((val, end))
    (width, _), (height, _), (maxval, header_end) = dims
    if maxval >= 65536:
        raise FormatError(f"{path}: maxval {maxval} exceeds 16-bit range", header_end)

    if magic == b"P5":
        payload_start = header_end + 1  # single whitespace byte after maxval
        if payload_start > len(data):
            raise FormatError(f"{path}: missing payload", len(data))
        nbytes = 2 if maxval > 255 else 1
        expected = width * height * nbytes
        payload = data[payload_start : payload_start + expected]
        if len(payload) < expected:
            raise FormatError(
                f"{path}: truncated payload, expected {expected} bytes",
                payload_start + len(payload),
            )
        dtype = ">u2" if nbytes == 2 else np.uint8  # 16-bit PGM is big-endian
        pixels = np.frombuffer(payload, dtype=dtype).astype(np.float64)
    else:
        values = []
        for tok, off, _ in tokens:
            try:
                v = int(tok)
            except ValueError:
                raise FormatError(f"{path}: non-numeric sample {tok!r}", off) from None
            if not 0 <= v <= maxval:
                raise FormatError(f"{path}: sample {v} outside [0, {maxval}]", off)
            values.append(v)
        if len(values) < width * height:
            raise FormatError(
                f"{path}: truncated payload, {len(values)} of {width * height} samples",
                len(data),
            )
        pixels = np.array(values[: width * height], dtype=np.float64)
    return pixels.reshape(height, width)


def _save_pgm(img: np.ndarray, path: Path, maxval: int, ascii_format: bool = False):
    q = np.clip(np.rint(img), 0, maxval)
    header = f"P{'2' if ascii_format else '5'}\n{img.shape[1]} {img.shape[0]}\n{maxval}\n"
    if ascii_format:
        body = "\n".join(" ".join(str(int(v)) for v in row) for row in q) + "\n"
        path.write_bytes(header.encode() + body.encode())
    else:
        dtype = ">u2" if maxval > 255 else np.uint8
        path.write_bytes(header.encode() + q.astype(dtype).tobytes())


# ---------------------------------------------------------------------------
# PNG via Pillow
# ---------------------------------------------------------------------------

_GRAY_MODES = {"L", "I", "I;16", "I;16B", "1"}


def _load_png(path: Path) -> np.ndarray:
    try:
        im = PILImage.open(path)
        im.load()
    except Exception as exc:
        raise FormatError(f"{path}: not a readable PNG ({exc})", 0) from None
    if im.mode not in _GRAY_MODES:
        raise FormatError(f"{path}: mode {im.mode} is not 8/16-bit grayscale", 0)
    return np.asarray(im, dtype=np.float64)


def _save_png(img: np.ndarray, path: Path, maxval: int):
    q = np.clip(np.rint(img), 0, maxval)
    if maxval > 255:
        PILImage.fromarray(q.astype(np.uint16)).save(path)
    else:
        PILImage.fromarray(q.astype(np.uint8)).save(path)


def load_image(path, format: str | None = None) -> np.ndarray:
    """Load an 8/16-bit grayscale PGM or PNG as a float64 image.

    Intensities are transcribed as-is (no rescaling), so relative scale is
    preserved. ``format`` defaults to the file extension.
    """
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt == "pgm":
        return _load_pgm(path)
    if fmt == "png":
        return _load_png(path)
    raise ValueError(f"unsupported format {fmt!r} (expected 'pgm' or 'png')")


def save_image(img, path, format: str | None = None, bit_depth: int = 16, ascii_pgm: bool = False):
    """Write an image as PGM (P5, or P2 with ascii_pgm) or PNG.

    Values are rounded and clipped to the target depth; 16-bit PGM is written
    big-endian. Callers are responsible for scaling into [0, 2**bit_depth - 1].
    """
    img = as_image(img)
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if bit_depth not in (8, 16):
        raise ValueError("bit_depth must be 8 or 16")
    maxval = (1 << bit_depth) - 1
    if fmt == "pgm":
        _save_pgm(img, path, maxval, ascii_format=ascii_pgm)
    elif fmt == "png":
        _save_png(img, path, maxval)
    else:
        raise ValueError(f"unsupported format {fmt!r} (expected 'pgm' or 'png')")


# ---------------------------------------------------------------------------
# Noise
# ---------------------------------------------------------------------------

def add_gaussian_noise(img, noise: NoiseSpec) -> np.ndarray:
    """Add i.i.d. N(0, sigma^2) noise, bit-reproducible from the seed.

    The field is sampled as sigma * standard_normal so that scaling sigma by c
    scales the identical noise field by c exactly.
    """
    img = as_image(img)
    if noise.sigma == 0:
        return img
    rng = np.random.default_rng(noise.seed)
    return img + noise.sigma * rng.standard_normal(img.shape)


def noise_image(shape, noise: NoiseSpec) -> np.ndarray:
    """Pure-noise image of the given shape (zero background plus noise)."""
    rng = np.random.default_rng(noise.seed)
    return noise.sigma * rng.standard_normal(shape)


# ---------------------------------------------------------------------------
# Synthetic test pattern
# ---------------------------------------------------------------------------
#
# Geometry constants, in design units on a 129 x 129 canvas; other sides are
# produced by scaling. The layout keeps every shape separated by well over the
# filter width and away from the image border.

_RING_CENTER = (40.0, 40.0)
_RING_RADII = ((28.0, 30.0), (18.0, 20.0))  # two concentric rings, width 2
_VBAR = (100.0, 102.0, 6.0, 123.0)          # x0, x1, y0, y1
_HBAR = (6.0, 90.0, 118.0, 120.0)           # x0, x1, y0, y1
_TRIANGLE = ((8.0, 78.0), (30.0, 112.0), (14.0, 112.0))
_S_BOX = (44.0, 64.0, 76.0, 106.0)          # x0, x1, y0, y1 of the glyph
_S_STROKE = 2.0


def _fill_rect(mask, f, x0, x1, y0, y1):
    xa, xb = int(round(x0 * f)), int(round(x1 * f))
    ya, yb = int(round(y0 * f)), int(round(y1 * f))
    mask[ya:yb, xa:xb] = True


def _fill_triangle(mask, f, verts):
    (x1, y1), (x2, y2), (x3, y3) = [(x * f, y * f) for x, y in verts]
    yy, xx = np.mgrid[0 : mask.shape[0], 0 : mask.shape[1]]
    xx = xx.astype(np.float64)
    yy = yy.astype(np.float64)

    def edge(ax, ay, bx, by):
        return (bx - ax) * (yy - ay) - (by - ay) * (xx - ax)

    d1 = edge(x1, y1, x2, y2)
    d2 = edge(x2, y2, x3, y3)
    d3 = edge(x3, y3, x1, y1)
    inside = ((d1 >= 0) & (d2 >= 0) & (d3 >= 0)) | ((d1 <= 0) & (d2 <= 0) & (d3 <= 0))
    mask |= inside


def _pattern_mask(side: int) -> np.ndarray:
    f = side / 129.0
    mask = np.zeros((side, side), dtype=bool)

    yy, xx = np.mgrid[0:side, 0:side]
    cx, cy = _RING_CENTER[0] * f, _RING_CENTER[1] * f
    r = np.hypot(xx - cx, yy - cy)
    for r0, r1 in _RING_RADII:
        mask |= (r >= r0 * f) & (r < r1 * f)

    _fill_rect(mask, f, *_VBAR[:2], *_VBAR[2:])
    _fill_rect(mask, f, *_HBAR[:2], *_HBAR[2:])
    _fill_triangle(mask, f, _TRIANGLE)

    # Blocky letter 'S': three horizontal strokes joined by two verticals.
    x0, x1, y0, y1 = _S_BOX
    t = _S_STROKE
    ym = (y0 + y1) / 2 - t / 2
    _fill_rect(mask, f, x0, x1, y0, y0 + t)            # top
    _fill_rect(mask, f, x0, x0 + t, y0 + t, ym)        # upper-left connector
    _fill_rect(mask, f, x0, x1, ym, ym + t)            # middle
    _fill_rect(mask, f, x1 - t, x1, ym + t, y1 - t)    # lower-right connector
    _fill_rect(mask, f, x0, x1, y1 - t, y1)            # bottom
    return mask


def boundary_map(mask: np.ndarray) -> np.ndarray:
    """Pixels of ``mask`` with at least one 8-neighbor outside the region."""
    padded = np.pad(mask, 1, mode="constant", constant_values=False)
    all_nb = np.ones_like(mask, dtype=bool)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            all_nb &= padded[1 + dy : 1 + dy + mask.shape[0], 1 + dx : 1 + dx + mask.shape[1]]
    return mask & ~all_nb


def generate_test_pattern(spec: PatternSpec) -> tuple[np.ndarray, np.ndarray]:
    """Binary benchmark pattern and its ground-truth edge map.

    The pattern holds two concentric circular rings of width 2, two straight
    bars of width 2, one long triangle and the letter 'S', all at intensity
    ``contrast`` on a zero background. The ground truth marks the
    8-neighborhood boundary pixels of the foreground region and is independent
    of the contrast.
    """
    if spec.side < 65:
        raise ValueError(f"pattern side must be at least 65, got {spec.side}")
    mask = _pattern_mask(spec.side)
    img = np.where(mask, float(spec.contrast), 0.0)
    return img, boundary_map(mask)


# ---------------------------------------------------------------------------
# Noise-level estimation (plumbing; detectors assume sigma is known)
# ---------------------------------------------------------------------------

def estimate_sigma_mad(img) -> float:
    """Robust noise-sigma estimate from horizontal first differences.

    Uses 1.4826 * MAD(diff) / sqrt(2); exact for i.i.d. Gaussian noise on a
    locally constant image.
    """
    img = as_image(img)
    if img.shape[0] < 2 or img.shape[1] < 2:
        raise ValueError("image must be at least 2x2")
    d = np.diff(img, axis=1).ravel()
    mad = np.median(np.abs(d - np.median(d)))
    return float(1.4826 * mad / math.sqrt(2.0))
