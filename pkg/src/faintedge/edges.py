"""Accepted-edge records shared by the detectors and the suppression stage."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Edge:
    """One detected edge: a polyline with its matched-filter statistics.

    polyline        (k, 2) float array of (x, y) vertices, ordered
    length          max-norm length (sum of per-segment max-norm lengths)
    signed_response mean filter response with sign (positive side brighter
                    along plus_normal)
    response        |signed_response|
    level           construction level (pyramid level or tile tree depth)
    kind            'line' or 'curve'
    min_sub/max_sub signed response extrema over the immediate sub-edges
    sub_length      length of the sub-edges backing min_sub/max_sub
    sigma_e         estimated intensity spread beside the edge
    plus_normal     unit-ish vector pointing from the minus strip to the plus
                    strip (used for gradient-sign classification)
    """

    polyline: np.ndarray
    length: float
    signed_response: float
    level: int
    kind: str = "line"
    orientation_class: str | None = None
    direction: int | None = None
    min_sub: float = 0.0
    max_sub: float = 0.0
    sub_length: float = 1.0
    sigma_e: float = 0.0
    mean_intensity: float = 0.0
    plus_normal: tuple[float, float] = (1.0, 0.0)
    trimmed: bool = False

    @property
    def response(self) -> float:
        return abs(self.signed_response)

    @property
    def start(self) -> tuple[float, float]:
        return (float(self.polyline[0, 0]), float(self.polyline[0, 1]))

    @property
    def end(self) -> tuple[float, float]:
        return (float(self.polyline[-1, 0]), float(self.polyline[-1, 1]))

    def sort_key(self):
        # Deterministic ordering: longer first, then endpoints lexicographic.
        return (-self.length, tuple(np.asarray(self.polyline).ravel()))


@dataclass
class EdgeSet:
    """A collection of edges plus the dimensions they live in."""

    edges: list[Edge] = field(default_factory=list)
    provenance: str = "lines"
    shape: tuple[int, int] = (0, 0)  # (height, width)

    def __len__(self) -> int:
        return len(self.edges)

    def __iter__(self):
        return iter(self.edges)
