"""Line-delimited intermediate file formats shared between pipeline stages."""

from __future__ import annotations

import json

import numpy as np

from .detect import Direction, LabeledTrajectory, LaneChangeEvent, ManeuverLabel
from .errors import FormatError
from .ingest import UniformTrajectory

LABEL_NAMES = {ManeuverLabel.LCL: "LCL", ManeuverLabel.FLW: "FLW", ManeuverLabel.LCR: "LCR"}
LABEL_CODES = {name: code for code, name in LABEL_NAMES.items()}


def write_trajectories(trajs: list[UniformTrajectory], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tr in trajs:
            t = tr.t
            for i in range(tr.n):
                fh.write(
                    json.dumps(
                        {
                            "trip": tr.trip_id,
                            "t": float(t[i]),
                            "lat": float(tr.lat[i]),
                            "lon": float(tr.lon[i]),
                            "dl": float(tr.dist_left[i]),
                            "dr": float(tr.dist_right[i]),
                            "v": float(tr.speed[i]),
                            "hdg": float(tr.heading[i]),
                        }
                    )
                )
                fh.write("\n")


def write_labeled(labeled: list[LabeledTrajectory], path) -> None:
    """Labeled samples: trip, t, lat, lon, hdg, label and optional event time."""
    with open(path, "w", encoding="utf-8") as fh:
        for lt in labeled:
            t = lt.traj.t
            for i in range(lt.traj.n):
                rec = {
                    "trip": lt.traj.trip_id,
                    "t": float(t[i]),
                    "lat": float(lt.traj.lat[i]),
                    "lon": float(lt.traj.lon[i]),
                    "hdg": float(lt.traj.heading[i]),
                    "label": LABEL_NAMES[ManeuverLabel(lt.labels[i])],
                }
                if lt.event_index[i] >= 0:
                    rec["event_t"] = float(lt.events[lt.event_index[i]].t_cross)
                fh.write(json.dumps(rec))
                fh.write("\n")


def read_labeled(path):
    """Yield per-trip dicts of arrays: t, lat, lon, hdg, labels (int8)."""
    current_trip = None
    buf: list = []

    def flush():
        arr = np.array([row[:4] for row in buf], dtype=float)
        labels = np.array([row[4] for row in buf], dtype=np.int8)
        return {
            "trip": current_trip,
            "t": arr[:, 0],
            "lat": arr[:, 1],
            "lon": arr[:, 2],
            "hdg": arr[:, 3],
            "labels": labels,
        }

    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                row = (
                    float(rec["t"]), float(rec["lat"]), float(rec["lon"]),
                    float(rec["hdg"]), LABEL_CODES[rec["label"]],
                )
                trip = str(rec["trip"])
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise FormatError(f"bad labeled-sample line in {path}: {exc}") from exc
            if trip != current_trip and current_trip is not None:
                yield flush()
                buf = []
            current_trip = trip
            buf.append(row)
    if buf:
        yield flush()


def write_events(events: list[LaneChangeEvent], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ev in events:
            fh.write(
                json.dumps(
                    {
                        "trip": ev.trip_id,
                        "t": ev.t_cross,
                        "lat": ev.lat,
                        "lon": ev.lon,
                        "dir": ev.direction.value,
                    }
                )
            )
            fh.write("\n")


def read_events(path) -> list[LaneChangeEvent]:
    events = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                events.append(
                    LaneChangeEvent(
                        trip_id=str(rec["trip"]),
                        t_cross=float(rec["t"]),
                        direction=Direction(rec["dir"]),
                        lat=float(rec["lat"]),
                        lon=float(rec["lon"]),
                    )
                )
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise FormatError(f"bad event line in {path}: {exc}") from exc
    return events
