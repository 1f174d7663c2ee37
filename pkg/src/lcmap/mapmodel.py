"""Digital link map: loading, equal-length resegmentation, geometric features
(bend, slope) and heading-constrained map matching.

The bend of a link is the maximum perpendicular deviation of its polyline from
the start-end secant, normalized by arclength; straight links have bend 0, a
semicircle has magnitude 1/pi. The sign follows the vehicle coordinate
convention: left turns positive, right turns negative (in travel direction).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import geo
from .errors import FormatError

log = logging.getLogger(__name__)

DEFAULT_SEG_LEN = 200.0
DEFAULT_MATCH_RADIUS = 25.0
DEFAULT_HEADING_TOL = 45.0
SLOPE_PLAUSIBLE_PCT = 20.0

_DIRECTIONS = ("forward", "backward", "both")


@dataclass
class SourceLink:
    link_id: str
    lat: np.ndarray
    lon: np.ndarray
    elev: np.ndarray | None
    road_class: str = "motorway"
    speed_limit: float | None = None
    direction: str = "forward"


@dataclass
class InterchangeNode:
    node_id: str
    lat: float
    lon: float
    kind: str  # "merger" | "divider"


@dataclass
class RoadMap:
    links: list[SourceLink]
    nodes: list[InterchangeNode] = field(default_factory=list)


@dataclass
class Link:
    """Resegmented, direction-oriented piece of a source link."""

    link_id: str
    source_id: str
    seg_index: int
    direction: str  # "F" | "B"
    lat: np.ndarray
    lon: np.ndarray
    elev: np.ndarray | None
    length_m: float
    bend: float | None
    slope_pct: float | None
    road_class: str = "motorway"
    speed_limit: float | None = None


def _polyline_ok(lat, lon):
    if len(lat) < 2:
        return False
    dup = (np.diff(lat) == 0) & (np.diff(lon) == 0)
    return not dup.any()


def load_map(path) -> RoadMap:
    """Load the documented JSON map file (see docs/map-format.md)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read map file {path}: {exc}") from exc
    if not isinstance(doc, dict) or "links" not in doc:
        raise FormatError(f"map file {path} has no 'links' array")

    links = []
    for i, raw in enumerate(doc["links"]):
        try:
            pts = np.array(raw["points"], dtype=float)
            if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] not in (2, 3):
                raise ValueError("bad points shape")
            lat = pts[:, 1].copy()
            lon = pts[:, 0].copy()
            elev = pts[:, 2].copy() if pts.shape[1] == 3 else None
            direction = raw.get("dir", "forward")
            if direction not in _DIRECTIONS:
                raise ValueError(f"bad dir {direction!r}")
            if not _polyline_ok(lat, lon):
                raise ValueError("degenerate polyline")
            links.append(
                SourceLink(
                    link_id=str(raw["id"]),
                    lat=lat,
                    lon=lon,
                    elev=elev,
                    road_class=str(raw.get("road_class", "motorway")),
                    speed_limit=raw.get("speed_limit"),
                    direction=direction,
                )
            )
        except (KeyError, ValueError, TypeError) as exc:
            log.warning("skipping invalid link #%d: %s", i, exc)
    nodes = [
        InterchangeNode(
            node_id=str(raw.get("id", f"n{i}")),
            lat=float(raw["lat"]),
            lon=float(raw["lon"]),
            kind=str(raw["kind"]),
        )
        for i, raw in enumerate(doc.get("nodes", []))
    ]
    return RoadMap(links=links, nodes=nodes)


def save_map(road_map: RoadMap, path) -> None:
    doc = {
        "links": [
            {
                "id": lk.link_id,
                "points": _points_rows(lk.lat, lk.lon, lk.elev),
                "road_class": lk.road_class,
                "speed_limit": lk.speed_limit,
                "dir": lk.direction,
            }
            for lk in road_map.links
        ],
        "nodes": [
            {"id": nd.node_id, "lat": nd.lat, "lon": nd.lon, "kind": nd.kind}
            for nd in road_map.nodes
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def _points_rows(lat, lon, elev):
    if elev is None:
        return [[float(lo), float(la)] for la, lo in zip(lat, lon)]
    return [[float(lo), float(la), float(el)] for la, lo, el in zip(lat, lon, elev)]


def _midpoint_projection(lat, lon) -> geo.LocalProjection:
    # anchor on the endpoint midpoint; computed commutatively so the reversed
    # polyline gets the bit-identical projection
    return geo.LocalProjection((lat[0] + lat[-1]) / 2.0, (lon[0] + lon[-1]) / 2.0)


def compute_bend(lat: np.ndarray, lon: np.ndarray) -> float | None:
    """Signed sagitta ratio: max secant deviation / arclength.

    Positive for left turns, negative for right turns; None for closed
    polylines where the secant degenerates.
    """
    proj = _midpoint_projection(lat, lon)
    x, y = proj.to_xy(lat, lon)
    dx = x[-1] - x[0]
    dy = y[-1] - y[0]
    secant = math.hypot(dx, dy)
    if secant < 1e-9:
        return None
    length = geo.polyline_length(x, y)
    if length < 1e-9:
        return None
    mx = (x[0] + x[-1]) / 2.0
    my = (y[0] + y[-1]) / 2.0
    # signed perpendicular offset of each vertex from the secant line
    offsets = (dx * (y - my) - dy * (x - mx)) / secant
    k = int(np.argmax(np.abs(offsets)))
    d_sl = abs(offsets[k])
    if d_sl == 0.0:
        return 0.0
    # deviation to the left of travel (positive cross z) means a left bulge,
    # which belongs to a right turn; flip to get the ISO sign convention
    sign = -1.0 if offsets[k] > 0 else 1.0
    return sign * d_sl / length


def compute_slope(lat, lon, elev) -> float | None:
    """Endpoint rise over arclength in percent, positive uphill in travel direction."""
    if elev is None or len(elev) < 2:
        return None
    proj = _midpoint_projection(lat, lon)
    x, y = proj.to_xy(lat, lon)
    length = geo.polyline_length(x, y)
    if length < 1e-9:
        return None
    slope = 100.0 * (float(elev[-1]) - float(elev[0])) / length
    if abs(slope) > SLOPE_PLAUSIBLE_PCT:
        log.warning("implausible slope %.1f%%, marking unavailable", slope)
        return None
    return slope


def _cut_positions(total: float, seg_len: float) -> list[float]:
    """Piece boundaries along [0, total]; remainder < seg_len/2 merges backward."""
    tol = 1e-6 * seg_len
    if total <= seg_len + tol:
        return [0.0, total]
    n_full = int(total // seg_len)
    rem = total - n_full * seg_len
    bounds = [i * seg_len for i in range(n_full + 1)]
    if rem <= tol:
        pass
    elif rem < seg_len / 2.0:
        bounds[-1] = total  # merge short remainder into the previous piece
    else:
        bounds.append(total)
    return bounds


def _slice_polyline(x, y, s, lat, lon, elev, proj, s_lo, s_hi):
    """Sub-polyline between arclengths s_lo..s_hi with interpolated endpoints."""
    inner = np.flatnonzero((s > s_lo) & (s < s_hi))
    xs = [np.interp(s_lo, s, x), *x[inner], np.interp(s_hi, s, x)]
    ys = [np.interp(s_lo, s, y), *y[inner], np.interp(s_hi, s, y)]
    lat_p, lon_p = proj.to_latlon(np.array(xs), np.array(ys))
    elev_p = None
    if elev is not None:
        elev_p = np.array([np.interp(s_lo, s, elev), *elev[inner], np.interp(s_hi, s, elev)])
    return lat_p, lon_p, elev_p


def resegment(links: list[SourceLink], seg_len: float = DEFAULT_SEG_LEN) -> list[Link]:
    """Cut source links into equal-length directed pieces and attach features.

    'both'-directional sources emit one piece sequence per direction with the
    geometry reversed for the backward one.
    """
    if seg_len <= 0:
        raise ValueError("seg_len must be positive")
    out: list[Link] = []
    for src in links:
        runs = []
        if src.direction in ("forward", "both"):
            runs.append(("F", src.lat, src.lon, src.elev))
        if src.direction in ("backward", "both"):
            runs.append(
                ("B", src.lat[::-1].copy(), src.lon[::-1].copy(),
                 None if src.elev is None else src.elev[::-1].copy())
            )
        for dir_flag, lat, lon, elev in runs:
            proj = _midpoint_projection(lat, lon)
            x, y = proj.to_xy(lat, lon)
            s = geo.cumulative_arclength(x, y)
            total = float(s[-1])
            if total <= 0:
                log.warning("zero-length link %s skipped", src.link_id)
                continue
            bounds = _cut_positions(total, seg_len)
            for i in range(len(bounds) - 1):
                lat_p, lon_p, elev_p = _slice_polyline(
                    x, y, s, lat, lon, elev, proj, bounds[i], bounds[i + 1]
                )
                px, py = _midpoint_projection(lat_p, lon_p).to_xy(lat_p, lon_p)
                length = geo.polyline_length(px, py)
                out.append(
                    Link(
                        link_id=f"{src.link_id}#{i}#{dir_flag}",
                        source_id=src.link_id,
                        seg_index=i,
                        direction=dir_flag,
                        lat=lat_p,
                        lon=lon_p,
                        elev=elev_p,
                        length_m=length,
                        bend=compute_bend(lat_p, lon_p),
                        slope_pct=compute_slope(lat_p, lon_p, elev_p),
                        road_class=src.road_class,
                        speed_limit=src.speed_limit,
                    )
                )
    return out


def save_links(links: list[Link], path, seg_len: float = DEFAULT_SEG_LEN,
               nodes: list[InterchangeNode] | None = None) -> None:
    doc = {
        "seg_len": seg_len,
        "links": [
            {
                "id": lk.link_id,
                "source": lk.source_id,
                "seg_index": lk.seg_index,
                "dir": lk.direction,
                "length_m": lk.length_m,
                "bend": lk.bend,
                "slope_pct": lk.slope_pct,
                "road_class": lk.road_class,
                "speed_limit": lk.speed_limit,
                "points": _points_rows(lk.lat, lk.lon, lk.elev),
            }
            for lk in links
        ],
        "nodes": [
            {"id": nd.node_id, "lat": nd.lat, "lon": nd.lon, "kind": nd.kind}
            for nd in (nodes or [])
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_links(path) -> tuple[list[Link], list[InterchangeNode]]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read resegmented map {path}: {exc}") from exc
    links = []
    for raw in doc["links"]:
        pts = np.array(raw["points"], dtype=float)
        links.append(
            Link(
                link_id=raw["id"],
                source_id=raw["source"],
                seg_index=int(raw["seg_index"]),
                direction=raw["dir"],
                lat=pts[:, 1].copy(),
                lon=pts[:, 0].copy(),
                elev=pts[:, 2].copy() if pts.shape[1] == 3 else None,
                length_m=float(raw["length_m"]),
                bend=raw["bend"],
                slope_pct=raw["slope_pct"],
                road_class=raw.get("road_class", "motorway"),
                speed_limit=raw.get("speed_limit"),
            )
        )
    nodes = [
        InterchangeNode(node_id=str(n.get("id", f"n{i}")), lat=float(n["lat"]),
                        lon=float(n["lon"]), kind=str(n["kind"]))
        for i, n in enumerate(doc.get("nodes", []))
    ]
    return links, nodes


class LinkIndex:
    """Immutable spatial index over resegmented links.

    Marker points are sampled every `step` meters along each polyline segment
    and held in a KD-tree; a query fetches the k nearest markers, verifies the
    exact point-to-segment distance and the heading constraint, and keeps the
    closest surviving link.
    """

    def __init__(self, links: list[Link], step: float = 5.0, k: int = 16):
        if not links:
            raise ValueError("cannot index an empty link list")
        self.links = links
        self.k = k
        lat0 = float(np.mean([lk.lat.mean() for lk in links]))
        lon0 = float(np.mean([lk.lon.mean() for lk in links]))
        self.proj = geo.LocalProjection(lat0, lon0)

        ax, ay, bx, by, ords, heads, mx, my = [], [], [], [], [], [], [], []
        for ordinal, lk in enumerate(links):
            x, y = self.proj.to_xy(lk.lat, lk.lon)
            for i in range(len(x) - 1):
                seg_len = math.hypot(x[i + 1] - x[i], y[i + 1] - y[i])
                if seg_len == 0:
                    continue
                n_marks = max(2, int(math.ceil(seg_len / step)) + 1)
                ts = np.linspace(0.0, 1.0, n_marks)
                mx.extend(x[i] + ts * (x[i + 1] - x[i]))
                my.extend(y[i] + ts * (y[i + 1] - y[i]))
                hd = geo.heading_from_delta(x[i + 1] - x[i], y[i + 1] - y[i])
                for _ in range(n_marks):
                    ax.append(x[i]); ay.append(y[i]); bx.append(x[i + 1]); by.append(y[i + 1])
                    ords.append(ordinal); heads.append(hd)
        self._ax = np.array(ax); self._ay = np.array(ay)
        self._bx = np.array(bx); self._by = np.array(by)
        self._ord = np.array(ords, dtype=np.int32)
        self._head = np.array(heads)
        self._tree = cKDTree(np.column_stack([mx, my]))

    def match(
        self,
        lat,
        lon,
        heading,
        radius: float = DEFAULT_MATCH_RADIUS,
        heading_tol: float = DEFAULT_HEADING_TOL,
    ) -> np.ndarray:
        """Vectorized match; returns link ordinals, -1 where unmatched."""
        lat = np.atleast_1d(np.asarray(lat, dtype=float))
        lon = np.atleast_1d(np.asarray(lon, dtype=float))
        heading = np.atleast_1d(np.asarray(heading, dtype=float))
        px, py = self.proj.to_xy(lat, lon)
        pts = np.column_stack([px, py])
        k = min(self.k, self._tree.n)
        _, idx = self._tree.query(pts, k=k, distance_upper_bound=radius * 2.0)
        if k == 1:
            idx = idx[:, None]
        missing = idx >= self._tree.n
        idx = np.where(missing, 0, idx)
        dist = geo.point_segment_distance(
            px[:, None], py[:, None],
            self._ax[idx], self._ay[idx], self._bx[idx], self._by[idx],
        )
        hd = np.abs(geo.heading_diff(heading[:, None], self._head[idx]))
        ok = (~missing) & (dist <= radius) & (hd <= heading_tol)
        dist = np.where(ok, dist, np.inf)
        best = np.argmin(dist, axis=1)
        rows = np.arange(len(pts))
        result = self._ord[idx[rows, best]].astype(np.int64)
        result[~ok[rows, best]] = -1
        return result


def brute_force_match(
    links: list[Link],
    proj: geo.LocalProjection,
    lat: float,
    lon: float,
    heading: float,
    radius: float = DEFAULT_MATCH_RADIUS,
    heading_tol: float = DEFAULT_HEADING_TOL,
) -> int:
    """Exact reference matcher: scan every polyline segment of every link."""
    px, py = proj.to_xy(lat, lon)
    best = -1
    best_dist = math.inf
    for ordinal, lk in enumerate(links):
        x, y = proj.to_xy(lk.lat, lk.lon)
        d = geo.point_segment_distance(
            np.full(len(x) - 1, px), np.full(len(x) - 1, py), x[:-1], y[:-1], x[1:], y[1:]
        )
        heads = geo.heading_from_delta(np.diff(x), np.diff(y))
        ok = (d <= radius) & (np.abs(geo.heading_diff(heading, heads)) <= heading_tol)
        if ok.any():
            dmin = float(d[ok].min())
            if dmin < best_dist:
                best_dist = dmin
                best = ordinal
    return best
