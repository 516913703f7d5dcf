"""Shared parameter records for the detectors and suppression stages."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class DetectorParams:
    """Knobs shared by the straight-line and beam-curve detectors.

    w         filter width in pixels (even; w/2 samples per side)
    s         spacing between the two filter halves (straight lines only)
    sigma     noise standard deviation (assumed known)
    delta     false-alarm budget for the pure-noise acceptance probability
    beta      growth exponent of the beam-curve search-space size
    k         interface pixels scanned per pair in greedy beam stitching
    max_length  optional cap on line length / pyramid depth
    cct_min_length  shortest sub-edge tested by the consistent-contrast
              test; sub-edges are tracked recursively down to this length
    """

    w: int = 4
    s: int = 1
    sigma: float = 1.0
    delta: float = 0.5
    beta: float = 0.65
    k: int = 40
    max_length: int | None = None
    cct_min_length: int = 8

    def __post_init__(self):
        if self.w < 2 or self.w % 2 != 0:
            raise ValueError("w must be an even integer >= 2")
        if self.s < 0:
            raise ValueError("s must be nonnegative")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if not 0 < self.delta <= 0.5:
            raise ValueError("delta must lie in (0, 0.5]")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.k < 1:
            raise ValueError("k must be a positive integer")
        if self.cct_min_length < 1:
            raise ValueError("cct_min_length must be a positive integer")

    @property
    def thresholds(self):
        from .thresholds import ThresholdParams

        return ThresholdParams(sigma=self.sigma, w=self.w, delta=self.delta, beta=self.beta)


@dataclass(frozen=True)
class SuppressionParams:
    """Non-maximum suppression constants.

    overlap_fraction  inter-level overlap above which a shorter line is dropped
    hausdorff_tol     distance (px) below which curves are declared overlapping
    """

    overlap_fraction: float = 0.52
    hausdorff_tol: float = 2.0

    def __post_init__(self):
        if not 0 < self.overlap_fraction < 1:
            raise ValueError("overlap_fraction must lie in (0, 1)")
        if not 1 <= self.hausdorff_tol <= 3:
            raise ValueError("hausdorff_tol must lie in [1, 3] pixels")
