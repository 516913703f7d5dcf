"""Detection of faint straight and curved step edges in noisy grayscale images.

The package searches large families of candidate curves with matched
difference filters built hierarchically (length-doubling line pyramids and a
beam-curve binary tree), keeps responses that clear a multiple-testing
detection threshold plus a consistent-contrast test, removes redundant
detections with non-maximum suppression, and offers a fiber-enhancement
pipeline plus Monte-Carlo / synthetic-benchmark validation harnesses.
"""

from .image import (
    FormatError,
    NoiseSpec,
    PatternSpec,
    add_gaussian_noise,
    estimate_sigma_mad,
    generate_test_pattern,
    load_image,
    save_image,
)
from .params import DetectorParams, SuppressionParams
from .thresholds import (
    CctParams,
    ThresholdParams,
    beamcurve_threshold,
    beamcurve_threshold_limit,
    cct_threshold,
    detection_threshold,
    threshold_decay_ratio,
)
from .edges import Edge, EdgeSet
from .lines import LinePyramid, build_line_pyramid, cross_section_responses, detect_lines
from .beamcurve import BeamCurve, BeamTree, bottom_level, build_beam_tree, curve_count_audit, detect_curves, stitch
from .suppression import curve_nms, line_nms, rasterize
from .fibers import DiffusionParams, SignedEdgeMaps, classify_signs, diffusion_map, enhance_fibers, total_fiber_length
from .mc import empirical_max_response, greedy_monotone_response, monotone_curve_samples
from .evaluate import EvalResult, f_measure, run_detector, runtime_audit, snr_sweep

__all__ = [
    "FormatError",
    "NoiseSpec",
    "PatternSpec",
    "add_gaussian_noise",
    "estimate_sigma_mad",
    "generate_test_pattern",
    "load_image",
    "save_image",
    "DetectorParams",
    "SuppressionParams",
    "ThresholdParams",
    "CctParams",
    "detection_threshold",
    "beamcurve_threshold",
    "beamcurve_threshold_limit",
    "threshold_decay_ratio",
    "cct_threshold",
    "Edge",
    "EdgeSet",
    "LinePyramid",
    "build_line_pyramid",
    "cross_section_responses",
    "detect_lines",
    "BeamCurve",
    "BeamTree",
    "build_beam_tree",
    "bottom_level",
    "stitch",
    "detect_curves",
    "curve_count_audit",
    "line_nms",
    "curve_nms",
    "rasterize",
    "SignedEdgeMaps",
    "DiffusionParams",
    "classify_signs",
    "diffusion_map",
    "enhance_fibers",
    "total_fiber_length",
    "empirical_max_response",
    "greedy_monotone_response",
    "monotone_curve_samples",
    "EvalResult",
    "f_measure",
    "run_detector",
    "snr_sweep",
    "runtime_audit",
]
