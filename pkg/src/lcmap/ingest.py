"""Raw trajectory parsing and resampling onto the fixed 50 ms time grid.

Input files are line-delimited JSON, one record per line with fields
``trip, t, lat, lon, dl, dr, v, hdg`` (see docs/trajectory-format.md).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, FormatError

log = logging.getLogger(__name__)

DEFAULT_DT = 0.05
DEFAULT_GAP_LIMIT = 1.0
MAX_TRIP_DURATION_S = 200.0

_REQUIRED_KEYS = ("trip", "t", "lat", "lon", "dl", "dr", "v", "hdg")

# Structure-of-arrays channel names shared by Raw- and UniformTrajectory.
CHANNELS = ("lat", "lon", "dist_left", "dist_right", "speed", "heading")


@dataclass
class RawTrajectory:
    """One trip's measurement sequence, sorted by time, possibly non-uniform."""

    trip_id: str
    t: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    dist_left: np.ndarray
    dist_right: np.ndarray
    speed: np.ndarray
    heading: np.ndarray

    @property
    def n(self) -> int:
        return len(self.t)

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0]) if self.n else 0.0


@dataclass
class UniformTrajectory:
    """Trajectory on the equidistant grid t0 + k*dt, no gaps."""

    trip_id: str
    t0: float
    dt: float
    lat: np.ndarray
    lon: np.ndarray
    dist_left: np.ndarray
    dist_right: np.ndarray
    speed: np.ndarray
    heading: np.ndarray

    @property
    def n(self) -> int:
        return len(self.lat)

    @property
    def t(self) -> np.ndarray:
        return self.t0 + np.arange(self.n) * self.dt


@dataclass
class ParseReport:
    total_lines: int = 0
    dropped_lines: int = 0
    dropped_samples: int = 0
    rejected_trips: list = field(default_factory=list)


def _valid_record(rec) -> bool:
    if not isinstance(rec, dict):
        return False
    for key in _REQUIRED_KEYS:
        if key not in rec:
            return False
    try:
        vals = [float(rec[k]) for k in _REQUIRED_KEYS[1:]]
    except (TypeError, ValueError):
        return False
    if not all(math.isfinite(v) for v in vals):
        return False
    t, lat, lon, dl, dr, v, hdg = vals
    return abs(lat) <= 90.0 and abs(lon) <= 180.0 and v >= 0.0


def parse_trajectory_file(path) -> tuple[list[RawTrajectory], ParseReport]:
    """Parse a line-delimited trajectory file into per-trip RawTrajectory.

    Malformed lines are dropped and counted; trips longer than 200 s are
    rejected as a whole. Raises FormatError when no line parses at all.
    """
    report = ParseReport()
    by_trip: dict[str, list] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            report.total_lines += 1
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                report.dropped_lines += 1
                continue
            if not _valid_record(rec):
                report.dropped_lines += 1
                continue
            row = [float(rec[k]) for k in _REQUIRED_KEYS[1:]]
            row[6] = row[6] % 360.0  # normalize heading
            by_trip.setdefault(str(rec["trip"]), []).append(row)

    if report.total_lines and report.dropped_lines == report.total_lines:
        raise FormatError(f"no parsable record in {path}")
    if not report.total_lines:
        raise FormatError(f"empty trajectory file: {path}")

    trajectories = []
    for trip_id in sorted(by_trip):
        arr = np.array(by_trip[trip_id], dtype=float)
        order = np.argsort(arr[:, 0], kind="stable")
        arr = arr[order]
        # enforce strictly increasing timestamps, dropping dups/backsteps
        keep = np.ones(len(arr), dtype=bool)
        keep[1:] = np.diff(arr[:, 0]) > 0
        report.dropped_samples += int((~keep).sum())
        arr = arr[keep]
        if len(arr) and arr[-1, 0] - arr[0, 0] > MAX_TRIP_DURATION_S:
            report.rejected_trips.append(trip_id)
            log.warning("trip %s longer than %.0f s, rejected", trip_id, MAX_TRIP_DURATION_S)
            continue
        trajectories.append(
            RawTrajectory(
                trip_id=trip_id,
                t=arr[:, 0].copy(),
                lat=arr[:, 1].copy(),
                lon=arr[:, 2].copy(),
                dist_left=arr[:, 3].copy(),
                dist_right=arr[:, 4].copy(),
                speed=arr[:, 5].copy(),
                heading=arr[:, 6].copy(),
            )
        )
    if report.dropped_lines:
        log.info("dropped %d malformed line(s) in %s", report.dropped_lines, path)
    return trajectories, report


def _interp_heading(tq: np.ndarray, t: np.ndarray, heading_deg: np.ndarray) -> np.ndarray:
    """Interpolate compass headings along the shortest arc (unit-vector blend)."""
    rad = np.radians(heading_deg)
    hx = np.interp(tq, t, np.sin(rad))
    hy = np.interp(tq, t, np.cos(rad))
    out = np.degrees(np.arctan2(hx, hy)) % 360.0
    out[out >= 360.0] = 0.0  # guard against -0.0-degree wraparound
    # exactly antipodal headings cancel; fall back to the left bracketing value
    bad = np.hypot(hx, hy) < 1e-9
    if bad.any():
        idx = np.clip(np.searchsorted(t, tq[bad], side="right") - 1, 0, len(t) - 1)
        out[bad] = heading_deg[idx]
    return out


def _resample_piece(trip_id, t, channels: dict, dt: float) -> UniformTrajectory | None:
    t0 = float(t[0])
    n = int(math.floor((t[-1] - t0) / dt + 1e-9)) + 1
    if n < 2:
        return None  # piece shorter than one grid step carries no information
    grid = t0 + np.arange(n) * dt
    if n == len(t) and np.array_equal(grid, t):
        # already on the grid: keep values bit-for-bit (makes resampling idempotent)
        data = {name: vals.copy() for name, vals in channels.items()}
    else:
        data = {
            name: _interp_heading(grid, t, vals) if name == "heading" else np.interp(grid, t, vals)
            for name, vals in channels.items()
        }
    return UniformTrajectory(trip_id=trip_id, t0=t0, dt=dt, **data)


def resample_equidistant(
    raw: RawTrajectory, dt: float = DEFAULT_DT, gap_limit: float = DEFAULT_GAP_LIMIT
) -> list[UniformTrajectory]:
    """Resample onto the uniform grid, splitting at gaps larger than gap_limit.

    Continuous channels are linearly interpolated; heading is interpolated on
    the circle. Returns one UniformTrajectory per gap-free piece.
    """
    if raw.n < 2:
        raise DegenerateInputError(f"trip {raw.trip_id}: need at least 2 samples, got {raw.n}")
    gaps = np.flatnonzero(np.diff(raw.t) > gap_limit)
    bounds = [0, *list(gaps + 1), raw.n]
    pieces = []
    multi = len(bounds) > 2
    for k in range(len(bounds) - 1):
        lo, hi = bounds[k], bounds[k + 1]
        if hi - lo < 2:
            continue
        trip_id = f"{raw.trip_id}/{k}" if multi else raw.trip_id
        channels = {name: getattr(raw, name)[lo:hi] for name in CHANNELS}
        piece = _resample_piece(trip_id, raw.t[lo:hi], channels, dt)
        if piece is not None:
            pieces.append(piece)
    return pieces
