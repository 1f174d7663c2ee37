"""Synthetic fleet generator with analytically known per-link behavior.

Vehicles traverse a configurable corridor at constant speed; lane changes are
drawn per resegmented link as Poisson processes whose rates encode the
location effects under study (interchange boost, bend dampening, slope
interaction). Each change renders a smooth 3 s lateral ramp; the marking
distance channels re-lock with a small hysteresis, exactly the signature the
detector looks for. A fixed seed makes every output byte reproducible.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import geo
from .analyze import tag_interchange_proximity
from .errors import ConfigError
from .mapmodel import InterchangeNode, Link, RoadMap, SourceLink, resegment

ARC_STEP_M = 5.0
STRAIGHT_STEP_M = 25.0


@dataclass
class CorridorSegment:
    length_m: float
    radius_m: float | None = None  # None = straight
    turn: str = "left"             # "left" | "right"
    slope_pct: float = 0.0


@dataclass
class ScenarioNode:
    kind: str   # "merger" | "divider"
    at_m: float  # arclength position along the corridor


@dataclass
class CorridorSpec:
    segments: list
    origin_lat: float = 48.7
    origin_lon: float = 9.1
    heading0_deg: float = 90.0  # due east
    nodes: list = field(default_factory=list)


@dataclass
class ScenarioConfig:
    corridor: CorridorSpec
    seed: int = 0
    fleet_size: int = 10
    trips_per_vehicle: int = 1
    speed_mps: float = 30.0
    dt: float = 0.05
    trip_max_s: float = 200.0
    rate_lcl_per_km: float = 0.2   # baseline events per km driven
    rate_lcr_per_km: float = 0.2
    noise_sigma: float = 0.0
    ramp_s: float = 3.0
    lane_width: float = 3.5
    n_lanes: int = 5
    marking_hysteresis: float = 0.05
    seg_len: float = 200.0
    horizon_s: float = 5.0
    interchange_boost: float = 1.0
    boost_radius_m: float = 1000.0
    bend_dampening: float = 0.0    # rate multiplier exp(-k * |bend|)
    slope_effect: float = 0.0      # rate multiplier exp(-k * slope_pct)

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioConfig":
        doc = dict(doc)
        cor = doc.pop("corridor")
        spec = CorridorSpec(
            segments=[CorridorSegment(**seg) for seg in cor["segments"]],
            origin_lat=cor.get("origin_lat", 48.7),
            origin_lon=cor.get("origin_lon", 9.1),
            heading0_deg=cor.get("heading0_deg", 90.0),
            nodes=[ScenarioNode(**nd) for nd in cor.get("nodes", [])],
        )
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(corridor=spec, **doc)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        return out


@dataclass
class Corridor:
    proj: geo.LocalProjection
    s: np.ndarray        # cumulative chord arclength per vertex
    x: np.ndarray
    y: np.ndarray
    elev: np.ndarray
    heading: np.ndarray  # compass heading per vertex interval (len n-1)
    road_map: RoadMap

    @property
    def total_length(self) -> float:
        return float(self.s[-1])

    def sample(self, s_query: np.ndarray):
        """Position, heading and elevation at arclength(s)."""
        x = np.interp(s_query, self.s, self.x)
        y = np.interp(s_query, self.s, self.y)
        elev = np.interp(s_query, self.s, self.elev)
        seg = np.clip(np.searchsorted(self.s, s_query, side="right") - 1, 0, len(self.heading) - 1)
        return x, y, elev, self.heading[seg]


def _segment_vertices(x0, y0, h_rad, seg: CorridorSegment):
    """Planar vertex chain for one corridor segment, excluding the start point."""
    if seg.radius_m is None:
        n = max(1, int(math.ceil(seg.length_m / STRAIGHT_STEP_M)))
        d = np.arange(1, n + 1) * (seg.length_m / n)
        xs = x0 + d * math.sin(h_rad)
        ys = y0 + d * math.cos(h_rad)
        return xs, ys, h_rad
    R = float(seg.radius_m)
    phi_total = seg.length_m / R
    n = max(2, int(math.ceil(seg.length_m / ARC_STEP_M)))
    phi = np.arange(1, n + 1) * (phi_total / n)
    if seg.turn == "left":
        cx = x0 - R * math.cos(h_rad)
        cy = y0 + R * math.sin(h_rad)
        xs = cx + R * np.cos(h_rad - phi)
        ys = cy - R * np.sin(h_rad - phi)
        h_end = h_rad - phi_total
    else:
        cx = x0 + R * math.cos(h_rad)
        cy = y0 - R * math.sin(h_rad)
        xs = cx - R * np.cos(h_rad + phi)
        ys = cy + R * np.sin(h_rad + phi)
        h_end = h_rad + phi_total
    return xs, ys, h_end


def build_corridor(spec: CorridorSpec) -> Corridor:
    """Trace the corridor and derive the source-link road map from it."""
    proj = geo.LocalProjection(spec.origin_lat, spec.origin_lon)
    xs = [0.0]
    ys = [0.0]
    elevs = [0.0]
    h = math.radians(spec.heading0_deg)
    links = []
    seg_start_idx = [0]
    for j, seg in enumerate(spec.segments):
        sx, sy, h = _segment_vertices(xs[-1], ys[-1], h, seg)
        prev_x, prev_y = xs[-1], ys[-1]
        for vx, vy in zip(sx, sy):
            ds = math.hypot(vx - prev_x, vy - prev_y)
            elevs.append(elevs[-1] + seg.slope_pct / 100.0 * ds)
            prev_x, prev_y = vx, vy
        xs.extend(sx)
        ys.extend(sy)
        seg_start_idx.append(len(xs) - 1)

    x = np.array(xs)
    y = np.array(ys)
    elev = np.array(elevs)
    s = geo.cumulative_arclength(x, y)
    heading = geo.heading_from_delta(np.diff(x), np.diff(y))
    lat, lon = proj.to_latlon(x, y)

    for j in range(len(spec.segments)):
        lo, hi = seg_start_idx[j], seg_start_idx[j + 1] + 1
        links.append(
            SourceLink(
                link_id=f"seg{j}",
                lat=lat[lo:hi].copy(),
                lon=lon[lo:hi].copy(),
                elev=elev[lo:hi].copy(),
                direction="forward",
            )
        )
    nodes = []
    for i, nd in enumerate(spec.nodes):
        nx = np.interp(nd.at_m, s, x)
        ny = np.interp(nd.at_m, s, y)
        nla, nlo = proj.to_latlon(nx, ny)
        nodes.append(InterchangeNode(node_id=f"n{i}", lat=float(nla), lon=float(nlo), kind=nd.kind))
    return Corridor(proj=proj, s=s, x=x, y=y, elev=elev, heading=heading,
                    road_map=RoadMap(links=links, nodes=nodes))


@dataclass
class TrueEvent:
    trip_id: str
    t_cross: float
    direction: str  # "L" | "R"
    lat: float
    lon: float
    link_id: str


@dataclass
class GroundTruth:
    events: list
    link_rates: dict      # link_id -> [lam_l, lam_r] in events/s while on the link
    expected: dict        # link_id -> [p_lcl, p_flw, p_lcr]
    config: dict

    def save(self, path) -> None:
        doc = {
            "config": self.config,
            "link_rates": self.link_rates,
            "expected": self.expected,
            "events": [dataclasses.asdict(ev) for ev in self.events],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh)

    @classmethod
    def load(cls, path) -> "GroundTruth":
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        return cls(
            events=[TrueEvent(**ev) for ev in doc["events"]],
            link_rates=doc["link_rates"],
            expected=doc["expected"],
            config=doc["config"],
        )


def expected_proportions(lam_l: float, lam_r: float, horizon_s: float) -> np.ndarray:
    """Closed-form expected label proportions for Poisson lane-change events.

    A sample carries a change label iff a crossing falls within the horizon
    ahead of it, so P(change) = 1 - exp(-(lam_l + lam_r) * horizon), split
    proportionally between the two directions. For sparse rates this reduces
    to lam * horizon.
    """
    tot = lam_l + lam_r
    if tot <= 0:
        return np.array([0.0, 1.0, 0.0])
    p_change = 1.0 - math.exp(-tot * horizon_s)
    p_lcl = p_change * lam_l / tot
    p_lcr = p_change * lam_r / tot
    return np.array([p_lcl, 1.0 - p_lcl - p_lcr, p_lcr])


def symmetric_rates_for_target(p_each: float, horizon_s: float, speed_mps: float) -> float:
    """Events/km per class so that both change classes hit the target proportion."""
    if not 0 <= p_each < 0.5:
        raise ConfigError("target per-class proportion must be in [0, 0.5)")
    lam_tot = -math.log(1.0 - 2.0 * p_each) / horizon_s
    return lam_tot / 2.0 * 1000.0 / speed_mps


def link_rates(cfg: ScenarioConfig, links: list[Link], nodes: list[InterchangeNode]) -> dict:
    """Per-second (lam_l, lam_r) for each resegmented link, effects applied."""
    base_l = cfg.rate_lcl_per_km * cfg.speed_mps / 1000.0
    base_r = cfg.rate_lcr_per_km * cfg.speed_mps / 1000.0
    tags = {t.link_id: t.tag for t in tag_interchange_proximity(links, nodes, cfg.boost_radius_m)}
    rates = {}
    for lk in links:
        lam_l, lam_r = base_l, base_r
        if lk.bend is not None and cfg.bend_dampening:
            mult = math.exp(-cfg.bend_dampening * abs(lk.bend))
            lam_l *= mult
            lam_r *= mult
        if lk.slope_pct is not None and cfg.slope_effect:
            mult = math.exp(-cfg.slope_effect * lk.slope_pct)
            lam_l *= mult
            lam_r *= mult
        tag = tags.get(lk.link_id, "Plain")
        if tag == "NearDivider":
            lam_r *= cfg.interchange_boost
        elif tag == "NearMerger":
            lam_l *= cfg.interchange_boost
        expected = expected_proportions(lam_l, lam_r, cfg.horizon_s)
        if expected[0] + expected[2] > 0.5:
            raise ConfigError(
                f"link {lk.link_id}: expected lane-change fraction "
                f"{expected[0] + expected[2]:.3f} > 0.5, rates unreachable"
            )
        rates[lk.link_id] = (lam_l, lam_r)
    return rates


def _ramp_shape(u: np.ndarray) -> np.ndarray:
    return np.where(u <= 0, 0.0, np.where(u >= 1, 1.0, 0.5 * (1.0 - np.cos(np.pi * np.clip(u, 0, 1)))))


def _simulate_trip(cfg, corridor, intervals, rng, trip_id):
    """One trip: returns (records dict of arrays, accepted events)."""
    v = cfg.speed_mps
    total = corridor.total_length
    t_end = min(cfg.trip_max_s, (total - 1e-6) / v)
    n = int(math.floor(t_end / cfg.dt)) + 1
    t = np.arange(n) * cfg.dt
    s = v * t

    # draw Poisson candidates per link interval and class
    candidates = []
    for s_lo, s_hi, link_id, lam_l, lam_r in intervals:
        t_lo = s_lo / v
        t_hi = min(s_hi, s[-1]) / v
        if t_hi <= t_lo:
            continue
        span = t_hi - t_lo
        for lam, direction in ((lam_l, "L"), (lam_r, "R")):
            count = rng.poisson(lam * span)
            if count:
                times = t_lo + rng.random(count) * span
                candidates.extend((float(tc), direction) for tc in times)
    candidates.sort()

    half = cfg.ramp_s / 2.0
    lane = cfg.n_lanes // 2
    last_ramp_end = -math.inf
    accepted = []  # (t_start, t_cross, delta, lane_from)
    for t_c, direction in candidates:
        if t_c - half < last_ramp_end or t_c - half < 0 or t_c + half > t_end - cfg.dt:
            continue
        delta = 1 if direction == "L" else -1
        if not 0 <= lane + delta < cfg.n_lanes:
            delta = -delta  # redirect at the outermost lane to keep the total rate
            if not 0 <= lane + delta < cfg.n_lanes:
                continue
        accepted.append((t_c - half, t_c, delta, lane))
        lane += delta
        last_ramp_end = t_c + half

    w = cfg.lane_width
    lane0 = cfg.n_lanes // 2
    y_lane = np.full(n, float(lane0))
    assigned = np.full(n, lane0, dtype=np.int64)
    f_flip = 0.5 + cfg.marking_hysteresis / w
    u_flip = math.acos(1.0 - 2.0 * f_flip) / math.pi
    for t_start, _t_c, delta, _lf in accepted:
        y_lane += delta * _ramp_shape((t - t_start) / cfg.ramp_s)
        assigned += delta * (t >= t_start + u_flip * cfg.ramp_s)
    y = y_lane * w

    dl = (assigned + 0.5) * w - y
    dr = (assigned - 0.5) * w - y
    if cfg.noise_sigma > 0:
        dl = dl + rng.normal(0.0, cfg.noise_sigma, n)
        dr = dr + rng.normal(0.0, cfg.noise_sigma, n)

    cx, cy, _elev, heading = corridor.sample(s)
    off = y - lane0 * w
    h_rad = np.radians(heading)
    px = cx + off * (-np.cos(h_rad))
    py = cy + off * (np.sin(h_rad))
    lat, lon = corridor.proj.to_latlon(px, py)

    events = []
    for _t_start, t_c, delta, _lf in accepted:
        s_c = v * t_c
        ex, ey, _e, eh = corridor.sample(np.array([s_c]))
        ela, elo = corridor.proj.to_latlon(ex[0], ey[0])
        link_id = _link_at(intervals, s_c)
        events.append(
            TrueEvent(
                trip_id=trip_id,
                t_cross=t_c,
                direction="L" if delta > 0 else "R",
                lat=float(ela),
                lon=float(elo),
                link_id=link_id,
            )
        )
    return {
        "t": t, "lat": lat, "lon": lon, "dl": dl, "dr": dr,
        "v": np.full(n, float(v)), "hdg": heading,
    }, events


def _link_at(intervals, s_c):
    for s_lo, s_hi, link_id, _l, _r in intervals:
        if s_lo <= s_c < s_hi:
            return link_id
    return intervals[-1][2]


def _link_intervals(links: list[Link], rates: dict) -> list:
    """(s_lo, s_hi, link_id, lam_l, lam_r) in corridor order.

    Relies on generated corridors being one forward run of consecutive source
    segments, so cumulative piece lengths recover the arclength layout.
    """
    intervals = []
    s = 0.0
    for lk in links:
        lam_l, lam_r = rates[lk.link_id]
        intervals.append((s, s + lk.length_m, lk.link_id, lam_l, lam_r))
        s += lk.length_m
    return intervals


def generate(cfg: ScenarioConfig, out_traj, out_truth, out_map=None) -> GroundTruth:
    """Render the whole fleet to the trajectory file format plus ground truth."""
    corridor = build_corridor(cfg.corridor)
    seg_links = resegment(corridor.road_map.links, cfg.seg_len)
    rates = link_rates(cfg, seg_links, corridor.road_map.nodes)
    intervals = _link_intervals(seg_links, rates)

    all_events: list[TrueEvent] = []
    with open(out_traj, "w", encoding="utf-8") as fh:
        for vehicle in range(cfg.fleet_size):
            for trip in range(cfg.trips_per_vehicle):
                trip_id = f"v{vehicle:03d}t{trip:02d}"
                rng = np.random.default_rng(
                    np.random.SeedSequence([cfg.seed, vehicle, trip])
                )
                rec, events = _simulate_trip(cfg, corridor, intervals, rng, trip_id)
                all_events.extend(events)
                n = len(rec["t"])
                for i in range(n):
                    fh.write(
                        '{"trip": "%s", "t": %r, "lat": %r, "lon": %r, "dl": %r, '
                        '"dr": %r, "v": %r, "hdg": %r}\n'
                        % (
                            trip_id, float(rec["t"][i]), float(rec["lat"][i]),
                            float(rec["lon"][i]), float(rec["dl"][i]), float(rec["dr"][i]),
                            float(rec["v"][i]), float(rec["hdg"][i]),
                        )
                    )

    truth = GroundTruth(
        events=all_events,
        link_rates={lid: list(lam) for lid, lam in rates.items()},
        expected={
            lid: expected_proportions(lam[0], lam[1], cfg.horizon_s).tolist()
            for lid, lam in rates.items()
        },
        config=cfg.to_dict(),
    )
    truth.save(out_truth)
    if out_map is not None:
        from .mapmodel import save_map

        save_map(corridor.road_map, out_map)
    return truth
