"""Oriented-rectangle footprints: collision tests and boundary distances."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels


@dataclass(frozen=True)
class OrientedBox:
    """A vehicle footprint: center, heading (radians), length x width (m)."""

    cx: float
    cy: float
    heading: float
    length: float
    width: float

    def __post_init__(self):
        if self.length <= 0 or self.width <= 0:
            raise ValueError("box sides must be positive")
        if not (-math.pi < self.heading <= math.pi):
            object.__setattr__(self, "heading", kernels.wrap_angle(self.heading))

    def corners(self) -> np.ndarray:
        """4x2 corner array, counter-clockwise from front-left."""
        flat = kernels.rect_corners(self.cx, self.cy, self.heading, self.length, self.width)
        return np.array(flat, dtype=float).reshape(4, 2)


def boxes_collide(a: OrientedBox, b: OrientedBox) -> bool:
    """True when the rectangles overlap or touch (separating-axis test)."""
    return bool(
        kernels.rect_overlap(
            a.cx, a.cy, a.heading, a.length, a.width,
            b.cx, b.cy, b.heading, b.length, b.width,
        )
    )


def box_distance(a: OrientedBox, b: OrientedBox) -> float:
    """Minimal Euclidean gap between the rectangle boundaries, 0 on contact."""
    return float(
        kernels.rect_distance(
            a.cx, a.cy, a.heading, a.length, a.width,
            b.cx, b.cy, b.heading, b.length, b.width,
        )
    )
