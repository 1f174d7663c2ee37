"""Lane-crossing detection and 3-class maneuver labeling.

A crossing shows up in the lane-marking distance channels as the tracked
marking re-locking onto the next lane: the signed distance runs to (or just
past) zero and then jumps by roughly one lane width. We emit the event at the
re-lock jump sample and require the in-lane pattern (left marking positive,
right marking negative) to re-establish within a short settle window.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolationError
from .ingest import UniformTrajectory

DEFAULT_HORIZON_S = 5.0


class ManeuverLabel(enum.IntEnum):
    LCL = 0
    FLW = 1
    LCR = 2


class Direction(enum.Enum):
    LEFT = "L"
    RIGHT = "R"


@dataclass
class DetectionParams:
    jump_min: float = 2.0      # plausible lane-width jump bounds [m]
    jump_max: float = 5.5
    cross_eps: float = 0.3     # marking distance must be this close to zero pre-jump [m]
    settle_window: float = 1.0  # [s]
    settle_frac: float = 0.8   # share of settle samples that must show the in-lane pattern
    min_event_gap: float = 1.0  # [s]


@dataclass
class LaneChangeEvent:
    trip_id: str
    t_cross: float
    direction: Direction
    lat: float
    lon: float


@dataclass
class LabeledTrajectory:
    traj: UniformTrajectory
    labels: np.ndarray       # int8 ManeuverLabel codes, one per sample
    event_index: np.ndarray  # int32 index into the event list, -1 for FLW
    events: list = field(default_factory=list)


def _settle_ok(dl, dr, j, window, frac):
    hi = min(len(dl), j + window + 1)
    in_lane = (dl[j:hi] > 0) & (dr[j:hi] < 0)
    return in_lane.mean() >= frac


def detect_lane_changes(
    traj: UniformTrajectory, params: DetectionParams | None = None
) -> list[LaneChangeEvent]:
    """Detect crossings on one uniform trajectory, conservative on ambiguity."""
    p = params or DetectionParams()
    dl = traj.dist_left
    dr = traj.dist_right
    if traj.n < 2:
        return []
    window = max(1, int(round(p.settle_window / traj.dt)))
    t = traj.t

    jumps_l = np.diff(dl)
    jumps_r = np.diff(dr)
    cand_left = np.flatnonzero(
        (jumps_l >= p.jump_min) & (jumps_l <= p.jump_max) & (dl[:-1] <= p.cross_eps)
    ) + 1
    cand_right = np.flatnonzero(
        (jumps_r <= -p.jump_min) & (jumps_r >= -p.jump_max) & (dr[:-1] >= -p.cross_eps)
    ) + 1

    candidates = sorted(
        [(int(j), Direction.LEFT) for j in cand_left]
        + [(int(j), Direction.RIGHT) for j in cand_right]
    )
    events: list[LaneChangeEvent] = []
    last_t = -math.inf
    for j, direction in candidates:
        if not _settle_ok(dl, dr, j, window, p.settle_frac):
            continue
        tj = float(t[j])
        if tj - last_t < p.min_event_gap:
            continue  # merged into the previous event
        last_t = tj
        events.append(
            LaneChangeEvent(
                trip_id=traj.trip_id,
                t_cross=tj,
                direction=direction,
                lat=float(traj.lat[j]),
                lon=float(traj.lon[j]),
            )
        )
    return events


def label_samples(
    traj: UniformTrajectory,
    events: list[LaneChangeEvent],
    horizon_s: float = DEFAULT_HORIZON_S,
) -> LabeledTrajectory:
    """Label every sample LCL/FLW/LCR.

    A sample at time t belongs to a change when an event exists with
    0 <= t_cross - t <= horizon (boundary inclusive); overlapping windows go
    to the nearest upcoming event.
    """
    n = traj.n
    labels = np.full(n, ManeuverLabel.FLW, dtype=np.int8)
    event_index = np.full(n, -1, dtype=np.int32)
    best_delta = np.full(n, np.inf)
    t_end = traj.t0 + (n - 1) * traj.dt
    eps = 1e-9
    events_sorted = sorted(events, key=lambda e: e.t_cross)
    for i, ev in enumerate(events_sorted):
        if ev.t_cross < traj.t0 - eps or ev.t_cross > t_end + eps:
            raise ContractViolationError(
                f"event at t={ev.t_cross} outside trajectory span [{traj.t0}, {t_end}]"
            )
        k_lo = max(0, int(math.ceil((ev.t_cross - horizon_s - traj.t0) / traj.dt - eps)))
        k_hi = min(n - 1, int(math.floor((ev.t_cross - traj.t0) / traj.dt + eps)))
        if k_hi < k_lo:
            continue
        k = np.arange(k_lo, k_hi + 1)
        delta = ev.t_cross - (traj.t0 + k * traj.dt)
        closer = delta < best_delta[k]
        sel = k[closer]
        best_delta[sel] = delta[closer]
        labels[sel] = (
            ManeuverLabel.LCL if ev.direction is Direction.LEFT else ManeuverLabel.LCR
        )
        event_index[sel] = i
    return LabeledTrajectory(traj=traj, labels=labels, event_index=event_index, events=events_sorted)
