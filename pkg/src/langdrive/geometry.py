"""Oriented rectangles and the separating-axis overlap test."""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np


class Rect(NamedTuple):
    cx: float
    cy: float
    heading: float
    length: float
    width: float


def corners(r: Rect) -> np.ndarray:
    """Counter-clockwise corners, shape (4, 2)."""
    c, s = math.cos(r.heading), math.sin(r.heading)
    hl, hw = 0.5 * r.length, 0.5 * r.width
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([r.cx, r.cy])


def _axes(r: Rect) -> tuple[tuple[float, float], tuple[float, float]]:
    c, s = math.cos(r.heading), math.sin(r.heading)
    return (c, s), (-s, c)


def rect_intersect(a: Rect, b: Rect) -> bool:
    """True iff the closed rectangles share at least one point."""
    if a.length <= 0 or a.width <= 0 or b.length <= 0 or b.width <= 0:
        raise ValueError("rectangle sides must be positive")
    ca, cb = corners(a), corners(b)
    for axis in (*_axes(a), *_axes(b)):
        ax = np.asarray(axis)
        pa, pb = ca @ ax, cb @ ax
        if pa.max() < pb.min() or pb.max() < pa.min():
            return False
    return True


def heading_from_path(points: np.ndarray, origin=(0.0, 0.0)) -> np.ndarray:
    """Heading at each waypoint from the displacement since the previous one.

    The first waypoint uses the displacement from ``origin``; a zero displacement gives heading 0.
    """
    pts = np.asarray(points, dtype=np.float64)
    prev = np.vstack([np.asarray(origin, dtype=np.float64)[None, :], pts[:-1]])
    d = pts - prev
    moving = np.hypot(d[:, 0], d[:, 1]) > 0.0
    return np.where(moving, np.arctan2(d[:, 1], d[:, 0]), 0.0)
