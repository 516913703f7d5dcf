"""Statistical thresholds for matched-filter edge detection.

A candidate curve of length L searched among K_L alternatives is kept only if
its mean filter response exceeds a threshold calibrated so that a pure-noise
image produces no detections with probability >= 1 - delta. Surviving curves
are further screened by a consistent-contrast test, a generalized likelihood
ratio test on their sub-segment responses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ThresholdParams:
    """Inputs of the detection-threshold formula."""

    sigma: float
    w: int = 4
    delta: float = 0.5
    beta: float = 0.65

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.w < 2 or self.w % 2 != 0:
            raise ValueError("w must be an even integer >= 2")
        if not 0 < self.delta <= 0.5:
            raise ValueError("delta must lie in (0, 0.5]")
        if self.beta <= 0:
            raise ValueError("beta must be positive")


@dataclass(frozen=True)
class CctParams:
    """Inputs of the consistent-contrast test threshold.

    sigma_e is clamped up to sigma before solving: the edge-response spread
    cannot fall below the noise level, but plug-in estimates sometimes do.
    """

    mu_e: float
    sigma_e: float
    sigma: float
    w: int
    ell: int

    def __post_init__(self):
        if self.mu_e <= 0:
            raise ValueError("mu_e must be positive (pass response magnitudes)")
        if self.sigma_e <= 0 or self.sigma <= 0:
            raise ValueError("sigma_e and sigma must be positive")
        if self.w < 1 or self.ell < 1:
            raise ValueError("w and ell must be positive integers")


def detection_threshold(L: float, K_L: float, p: ThresholdParams) -> float:
    """Minimum |response| for one of K_L length-L candidates to be kept.

    T = sigma * sqrt(2 ln(K_L / delta) / (w L)). Nonincreasing in L for fixed
    K_L, nondecreasing in K_L, and exactly linear in sigma.
    """
    if L <= 0:
        raise ValueError("L must be positive")
    if K_L < p.delta:
        raise ValueError(f"K_L={K_L} below delta={p.delta}: threshold undefined")
    return p.sigma * math.sqrt(2.0 * math.log(K_L / p.delta) / (p.w * L))


def _log_beam_family_size(L, N: int, beta: float):
    # ln K_L for K_L = 6N * 2^(beta L), computed in log form so very long
    # curves cannot overflow.
    return math.log(6.0 * N) + beta * np.asarray(L, dtype=np.float64) * math.log(2.0)


def beamcurve_threshold(L: float, N: int, p: ThresholdParams) -> float:
    """Detection threshold for the beam-curve family of an N-pixel image.

    Equals detection_threshold with K_L = 6N * 2^(beta L). As L grows the
    value decreases to the strictly positive limit sigma * sqrt(2 beta ln2 / w):
    the exponential family never lets arbitrarily faint edges through.
    """
    if L <= 0:
        raise ValueError("L must be positive")
    if N < 1:
        raise ValueError("N must be a positive pixel count")
    log_k = _log_beam_family_size(L, N, p.beta) - math.log(p.delta)
    return p.sigma * math.sqrt(2.0 * float(log_k) / (p.w * L))


def beamcurve_threshold_array(L, N: int, p: ThresholdParams) -> np.ndarray:
    """Vectorized beamcurve_threshold for arrays of lengths."""
    L = np.asarray(L, dtype=np.float64)
    log_k = _log_beam_family_size(L, N, p.beta) - math.log(p.delta)
    with np.errstate(divide="ignore", invalid="ignore"):
        return p.sigma * np.sqrt(2.0 * log_k / (p.w * L))


def beamcurve_threshold_limit(p: ThresholdParams) -> float:
    """Large-L limit of the beam-curve threshold: sigma * sqrt(2 beta ln2 / w)."""
    return p.sigma * math.sqrt(2.0 * p.beta * math.log(2.0) / p.w)


def threshold_decay_ratio(L: float, K_L: float, K_aL: float, alpha: float) -> float:
    """Threshold decay rate T(L) / T(alpha L) ~ sqrt(alpha ln(2 K_L) / ln(2 K_aL)).

    For families whose size does not grow with L this equals sqrt(alpha),
    i.e. the threshold decays as L^(-1/2).
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if L <= 0:
        raise ValueError("L must be positive")
    if 2.0 * K_L <= 1.0 or 2.0 * K_aL <= 1.0:
        raise ValueError("family sizes must exceed 1/2 so both logarithms are positive")
    return math.sqrt(alpha * math.log(2.0 * K_L) / math.log(2.0 * K_aL))


def cct_threshold(c: CctParams) -> float:
    """Consistent-contrast threshold: sub-segment responses must exceed it.

    Positive root b of

        (sigma_e^2 - sigma^2) b^2 + 2 sigma^2 mu_e b
            + (2/(w ell)) sigma^2 sigma_e^2 ln(sigma/sigma_e) - sigma^2 mu_e^2 = 0,

    the equal-likelihood point between the edge hypothesis
    N(mu_e, sigma_e^2/(w ell)) and the noise hypothesis N(0, sigma^2/(w ell)).
    Degenerates to mu_e / 2 when sigma_e = sigma.
    """
    b = cct_threshold_array(
        np.float64(c.mu_e), np.float64(c.sigma_e), c.sigma, c.w, np.float64(c.ell)
    )
    b = float(b)
    assert b > 0, "consistent-contrast quadratic produced no positive root"
    return b


def cct_threshold_array(mu_e, sigma_e, sigma: float, w: int, ell) -> np.ndarray:
    """Vectorized cct_threshold; clamps sigma_e up to sigma elementwise."""
    mu = np.asarray(mu_e, dtype=np.float64)
    se = np.maximum(np.asarray(sigma_e, dtype=np.float64), sigma)
    ell = np.asarray(ell, dtype=np.float64)
    s2 = sigma * sigma
    a = se * se - s2
    bb = 2.0 * s2 * mu
    cc = (2.0 / (w * ell)) * s2 * se * se * np.log(sigma / se) - s2 * mu * mu
    # Stable quadratic solve: with a >= 0, bb > 0, cc <= 0 the positive root is
    # cc / q with q = -(bb + sqrt(disc)) / 2; at a == 0 this collapses to the
    # linear solution mu_e / 2 without a branch.
    disc = bb * bb - 4.0 * a * cc
    q = -0.5 * (bb + np.sqrt(disc))
    return cc / q
