"""Small planar-geometry helpers on top of a local equirectangular projection.

Links are a few hundred meters long, so a per-link (or per-map) equirectangular
projection keeps distortion far below the tolerances we care about while
avoiding a geodesy dependency.
"""

from __future__ import annotations

import math

import numpy as np

EARTH_RADIUS_M = 6_371_008.8


class LocalProjection:
    """Equirectangular projection anchored at (lat0, lon0), units in meters."""

    def __init__(self, lat0: float, lon0: float):
        self.lat0 = float(lat0)
        self.lon0 = float(lon0)
        self._coslat = math.cos(math.radians(self.lat0))

    def to_xy(self, lat, lon):
        lat = np.asarray(lat, dtype=float)
        lon = np.asarray(lon, dtype=float)
        x = np.radians(lon - self.lon0) * self._coslat * EARTH_RADIUS_M
        y = np.radians(lat - self.lat0) * EARTH_RADIUS_M
        return x, y

    def to_latlon(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        lat = self.lat0 + np.degrees(y / EARTH_RADIUS_M)
        lon = self.lon0 + np.degrees(x / (EARTH_RADIUS_M * self._coslat))
        return lat, lon


def polyline_length(x: np.ndarray, y: np.ndarray) -> float:
    """Arclength of a planar polyline.

    Uses math.fsum so the result does not depend on vertex order (the reversed
    polyline sums the exact same segment lengths).
    """
    seg = np.hypot(np.diff(x), np.diff(y))
    return math.fsum(seg.tolist())


def cumulative_arclength(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    seg = np.hypot(np.diff(x), np.diff(y))
    out = np.empty(len(x))
    out[0] = 0.0
    np.cumsum(seg, out=out[1:])
    return out


def heading_from_delta(dx, dy):
    """Compass heading in degrees [0, 360): 0 = north, 90 = east."""
    h = np.degrees(np.arctan2(dx, dy)) % 360.0
    return np.where(h >= 360.0, 0.0, h)


def heading_diff(a, b):
    """Smallest signed difference a - b in degrees, in (-180, 180]."""
    return -((b - a + 180.0) % 360.0 - 180.0)


def point_segment_distance(px, py, ax, ay, bx, by):
    """Distance from points (px, py) to segments (a, b); all array-like."""
    px = np.asarray(px, dtype=float)
    py = np.asarray(py, dtype=float)
    abx = bx - ax
    aby = by - ay
    denom = abx * abx + aby * aby
    with np.errstate(invalid="ignore", divide="ignore"):
        t = ((px - ax) * abx + (py - ay) * aby) / denom
    t = np.where(denom > 0, np.clip(t, 0.0, 1.0), 0.0)
    cx = ax + t * abx
    cy = ay + t * aby
    return np.hypot(px - cx, py - cy)
