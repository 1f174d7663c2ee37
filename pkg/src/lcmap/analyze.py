"""Analyses on top of the probability map: feature-binned lane-following
medians, lane-change heatmaps, interchange proximity tagging and link
exclusion experiments.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import geo
from .detect import LaneChangeEvent
from .aggregate import ProbabilityMap
from .errors import ContractViolationError
from .mapmodel import InterchangeNode, Link

log = logging.getLogger(__name__)

BEND_LIMIT = 0.07          # |bend| beyond this is too noisy to bin
DEFAULT_MIN_BIN_COUNT = 5
DEFAULT_BOOTSTRAP = 1000
DEFAULT_PROXIMITY_RADIUS = 1000.0
DEFAULT_CELL_SIZE = 500.0

FEATURES = ("bend", "slope_pct", "abs_bend")


@dataclass
class BinnedStat:
    feature: str
    bin_edges: list
    n_links: list
    median_p_flw: list   # nan where the bin is empty / below min count
    sem: list
    mean_p_flw: list
    n_skipped: int = 0   # links lacking the feature or beyond the bend limit


@dataclass
class HeatmapGrid:
    cell_size_m: float
    origin_lat: float
    origin_lon: float
    counts: np.ndarray  # [iy, ix]
    proj: geo.LocalProjection
    origin_x: float
    origin_y: float


@dataclass
class ProximityTag:
    link_id: str
    tag: str  # "NearMerger" | "NearDivider" | "Plain"
    distance_m: float  # inf when no direction-consistent node is in range


@dataclass
class ExclusionResult:
    with_all: BinnedStat
    without: BinnedStat
    delta_median: list = field(default_factory=list)


def default_bend_edges(width: float = 0.01, limit: float = BEND_LIMIT) -> list:
    n = int(round(2 * limit / width))
    return [round(-limit + i * width, 10) for i in range(n + 1)]


def default_slope_edges(width: float = 1.0, limit: float = 7.0) -> list:
    n = int(round(2 * limit / width))
    return [round(-limit + i * width, 10) for i in range(n + 1)]


def _feature_value(lk: Link, feature: str):
    if feature == "bend":
        return lk.bend
    if feature == "abs_bend":
        return None if lk.bend is None else abs(lk.bend)
    if feature == "slope_pct":
        return lk.slope_pct
    raise ValueError(f"unknown feature {feature!r}; expected one of {FEATURES}")


def bootstrap_sem_median(values: np.ndarray, n_boot: int, rng: np.random.Generator) -> float:
    """Bootstrap standard error of the median (deterministic under a fixed rng)."""
    n = len(values)
    if n < 2:
        return float("nan")
    resamples = rng.integers(0, n, size=(n_boot, n))
    medians = np.median(values[resamples], axis=1)
    return float(medians.std(ddof=1))


def bin_median_pflw(
    pm: ProbabilityMap,
    links_by_id: dict,
    feature: str,
    bin_edges,
    min_bin_count: int = DEFAULT_MIN_BIN_COUNT,
    bend_limit: float = BEND_LIMIT,
    n_boot: int = DEFAULT_BOOTSTRAP,
    seed: int = 0,
    exclude_ids=frozenset(),
) -> BinnedStat:
    """Median (and SEM, mean) of p_flw per feature bin over included links.

    Bins are left-closed, right-open; the last bin is right-closed. For bend
    features, links with |bend| > bend_limit are skipped.
    """
    edges = np.asarray(bin_edges, dtype=float)
    if len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("bin_edges must be strictly increasing with >= 2 entries")
    feats, pflws = [], []
    skipped = 0
    for lid, entry in pm.included().items():
        if lid in exclude_ids:
            continue
        lk = links_by_id.get(lid)
        value = None if lk is None else _feature_value(lk, feature)
        if value is None or not math.isfinite(value):
            skipped += 1
            continue
        if feature in ("bend", "abs_bend") and abs(lk.bend) > bend_limit:
            skipped += 1
            continue
        feats.append(value)
        pflws.append(entry.p_flw)
    feats = np.array(feats)
    pflws = np.array(pflws)

    n_bins = len(edges) - 1
    which = np.digitize(feats, edges) - 1
    which[feats == edges[-1]] = n_bins - 1  # last bin right-closed
    in_range = (which >= 0) & (which < n_bins)
    skipped += int((~in_range).sum())

    rng = np.random.default_rng(seed)
    n_links, medians, sems, means = [], [], [], []
    for b in range(n_bins):
        vals = pflws[in_range & (which == b)]
        n_links.append(int(len(vals)))
        if len(vals) >= min_bin_count:
            medians.append(float(np.median(vals)))
            sems.append(bootstrap_sem_median(vals, n_boot, rng))
            means.append(float(vals.mean()))
        else:
            medians.append(float("nan"))
            sems.append(float("nan"))
            means.append(float("nan"))
    return BinnedStat(
        feature=feature,
        bin_edges=list(edges),
        n_links=n_links,
        median_p_flw=medians,
        sem=sems,
        mean_p_flw=means,
        n_skipped=skipped,
    )


def write_binned_csv(stat: BinnedStat, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_lo", "bin_hi", "n", "median_p_flw", "sem", "mean_p_flw"])
        for i in range(len(stat.n_links)):
            writer.writerow(
                [
                    repr(stat.bin_edges[i]),
                    repr(stat.bin_edges[i + 1]),
                    stat.n_links[i],
                    "" if math.isnan(stat.median_p_flw[i]) else repr(stat.median_p_flw[i]),
                    "" if math.isnan(stat.sem[i]) else repr(stat.sem[i]),
                    "" if math.isnan(stat.mean_p_flw[i]) else repr(stat.mean_p_flw[i]),
                ]
            )


def build_heatmap(events: list[LaneChangeEvent], cell_size_m: float = DEFAULT_CELL_SIZE) -> HeatmapGrid:
    """Count lane-change events on a square grid covering all event positions."""
    lats = np.array([ev.lat for ev in events])
    lons = np.array([ev.lon for ev in events])
    if len(events) == 0:
        proj = geo.LocalProjection(0.0, 0.0)
        return HeatmapGrid(cell_size_m, 0.0, 0.0, np.zeros((0, 0), dtype=np.int64), proj, 0.0, 0.0)
    proj = geo.LocalProjection(float(lats.mean()), float(lons.mean()))
    x, y = proj.to_xy(lats, lons)
    ox = math.floor(x.min() / cell_size_m) * cell_size_m
    oy = math.floor(y.min() / cell_size_m) * cell_size_m
    ix = np.floor((x - ox) / cell_size_m).astype(int)
    iy = np.floor((y - oy) / cell_size_m).astype(int)
    counts = np.zeros((iy.max() + 1, ix.max() + 1), dtype=np.int64)
    np.add.at(counts, (iy, ix), 1)
    o_lat, o_lon = proj.to_latlon(ox, oy)
    return HeatmapGrid(cell_size_m, float(o_lat), float(o_lon), counts, proj, ox, oy)


def write_heatmap_csv(grid: HeatmapGrid, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        for row in grid.counts:
            writer.writerow([int(c) for c in row])


def heatmap_geojson(grid: HeatmapGrid, path) -> None:
    """Non-empty cells as weighted points at cell centers."""
    features = []
    iys, ixs = np.nonzero(grid.counts)
    for iy, ix in zip(iys, ixs):
        cx = grid.origin_x + (ix + 0.5) * grid.cell_size_m
        cy = grid.origin_y + (iy + 0.5) * grid.cell_size_m
        la, lo = grid.proj.to_latlon(cx, cy)
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [float(lo), float(la)]},
                "properties": {"count": int(grid.counts[iy, ix])},
            }
        )
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"type": "FeatureCollection", "features": features}, fh)


def tag_interchange_proximity(
    links: list[Link],
    nodes: list[InterchangeNode],
    radius: float = DEFAULT_PROXIMITY_RADIUS,
) -> list[ProximityTag]:
    """Direction-aware proximity tags.

    NearDivider: a divider node lies ahead of the link (in travel direction)
    within the radius. NearMerger: a merger node lies behind the link within
    the radius. The nearest qualifying node wins.
    """
    if not nodes:
        log.warning("no interchange nodes supplied; tagging everything Plain")
        return [ProximityTag(lk.link_id, "Plain", float("inf")) for lk in links]
    tags = []
    for lk in links:
        proj = geo.LocalProjection(float(lk.lat.mean()), float(lk.lon.mean()))
        x, y = proj.to_xy(lk.lat, lk.lon)
        mx = float((x[0] + x[-1]) / 2.0)
        my = float((y[0] + y[-1]) / 2.0)
        dirx = float(x[-1] - x[0])
        diry = float(y[-1] - y[0])
        best = ("Plain", float("inf"))
        for nd in nodes:
            nx, ny = proj.to_xy(nd.lat, nd.lon)
            dist = math.hypot(float(nx) - mx, float(ny) - my)
            if dist > radius or dist >= best[1]:
                continue
            along = dirx * (float(nx) - mx) + diry * (float(ny) - my)
            if nd.kind == "divider" and along > 0:
                best = ("NearDivider", dist)
            elif nd.kind == "merger" and along < 0:
                best = ("NearMerger", dist)
        tags.append(ProximityTag(lk.link_id, best[0], best[1]))
    return tags


def exclusion_experiment(
    pm: ProbabilityMap,
    links_by_id: dict,
    excluded_ids,
    feature: str,
    bin_edges,
    **binning_kwargs,
) -> ExclusionResult:
    """Compare a binned statistic with and without a set of links."""
    excluded_ids = set(excluded_ids)
    unknown = excluded_ids - set(pm.entries)
    if unknown:
        raise ContractViolationError(f"unknown link ids in exclusion set: {sorted(unknown)[:5]}")
    with_all = bin_median_pflw(pm, links_by_id, feature, bin_edges, **binning_kwargs)
    without = bin_median_pflw(
        pm, links_by_id, feature, bin_edges, exclude_ids=frozenset(excluded_ids), **binning_kwargs
    )
    delta = [w - a for w, a in zip(without.median_p_flw, with_all.median_p_flw)]
    return ExclusionResult(with_all=with_all, without=without, delta_median=delta)
