"""File-to-file orchestration of the pipeline stages.

Every function takes and returns plain paths plus a PipelineConfig, so the CLI
stays a thin argument-parsing shell and tests can drive stages directly.
Worker parallelism never changes results: work is sharded per trajectory and
folded back in input order into commutative integer counters.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import aggregate as agg
from . import analyze, detect, formats, ingest, mapmodel, simulate
from .config import PipelineConfig
from .errors import ConfigError

log = logging.getLogger(__name__)


def _map_unordered_keep_order(fn, items, threads):
    if threads <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def run_ingest(cfg: PipelineConfig, in_path, out_path) -> dict:
    raws, report = ingest.parse_trajectory_file(in_path)
    uniform = []
    for raw in raws:
        uniform.extend(ingest.resample_equidistant(raw, cfg.dt, cfg.gap_limit))
    formats.write_trajectories(uniform, out_path)
    return {
        "trips_in": len(raws),
        "trajectories_out": len(uniform),
        "dropped_lines": report.dropped_lines,
        "rejected_trips": len(report.rejected_trips),
    }


def _load_uniform(cfg: PipelineConfig, path) -> list[ingest.UniformTrajectory]:
    raws, _report = ingest.parse_trajectory_file(path)
    out = []
    for raw in raws:
        out.extend(ingest.resample_equidistant(raw, cfg.dt, cfg.gap_limit))
    return out


def run_detect(cfg: PipelineConfig, in_path, out_labeled, out_events) -> dict:
    params = detect.DetectionParams(
        jump_min=cfg.jump_min,
        jump_max=cfg.jump_max,
        cross_eps=cfg.cross_eps,
        settle_window=cfg.settle_window,
        min_event_gap=cfg.min_event_gap,
    )
    trajs = _load_uniform(cfg, in_path)

    def work(tr):
        events = detect.detect_lane_changes(tr, params)
        return detect.label_samples(tr, events, cfg.horizon_s)

    labeled = _map_unordered_keep_order(work, trajs, cfg.threads)
    formats.write_labeled(labeled, out_labeled)
    all_events = [ev for lt in labeled for ev in lt.events]
    formats.write_events(all_events, out_events)
    return {
        "trajectories": len(trajs),
        "events": len(all_events),
        "samples": sum(lt.traj.n for lt in labeled),
    }


def run_mapprep(cfg: PipelineConfig, map_path, out_path) -> dict:
    road_map = mapmodel.load_map(map_path)
    links = mapmodel.resegment(road_map.links, cfg.seg_len)
    mapmodel.save_links(links, out_path, cfg.seg_len, road_map.nodes)
    return {"source_links": len(road_map.links), "links": len(links),
            "nodes": len(road_map.nodes)}


def run_aggregate(
    cfg: PipelineConfig, labeled_path, events_path, seg_map_path, out_geojson, out_csv
) -> dict:
    links, _nodes = mapmodel.load_links(seg_map_path)
    index = mapmodel.LinkIndex(links)
    links_by_id = {lk.link_id: lk for lk in links}
    trips = list(formats.read_labeled(labeled_path))

    def match(trip):
        return index.match(trip["lat"], trip["lon"], trip["hdg"],
                           cfg.match_radius, cfg.heading_tol)

    ordinals_per_trip = _map_unordered_keep_order(match, trips, cfg.threads)
    counters: dict = {}
    unmatched = 0
    for trip, ordinals in zip(trips, ordinals_per_trip):
        unmatched += agg.accumulate_samples(counters, trip["labels"], ordinals, links)

    events_unmatched = 0
    if events_path is not None and Path(events_path).exists():
        events = formats.read_events(events_path)
        if events:
            by_trip = {trip["trip"]: trip for trip in trips}
            ords = index.match(
                np.array([e.lat for e in events]),
                np.array([e.lon for e in events]),
                np.array([_heading_of_event(by_trip, e) for e in events]),
                cfg.match_radius,
                360.0,  # events sit between lanes; position alone decides
            )
            events_unmatched = agg.accumulate_events(counters, events, ords, links)

    pm = agg.finalize(
        counters,
        cfg.density_min,
        metadata={"horizon_s": cfg.horizon_s, "seg_len": cfg.seg_len,
                  "unmatched_samples": unmatched, "unmatched_events": events_unmatched},
    )
    agg.export_probability_map(pm, links_by_id, out_geojson)
    agg.write_link_stats(pm, counters, links_by_id, out_csv)
    return {
        "links_with_data": len(pm.entries),
        "included": pm.metadata["n_included"],
        "unmatched_samples": unmatched,
    }


def _heading_of_event(by_trip, event):
    # nearest labeled sample of the same trip gives the heading at the crossing
    trip = by_trip.get(event.trip_id)
    if trip is None:
        return 0.0
    i = int(np.argmin(np.abs(trip["t"] - event.t_cross)))
    return float(trip["hdg"][i])


@dataclass
class _StatsLink:
    bend: float | None
    slope_pct: float | None


def _pm_from_stats(rows):
    entries = {
        r["link_id"]: agg.LinkProbability(
            r["link_id"], r["p_lcl"], r["p_flw"], r["p_lcr"], r["density"], r["included"]
        )
        for r in rows
    }
    links = {r["link_id"]: _StatsLink(r["bend"], r["slope_pct"]) for r in rows}
    return agg.ProbabilityMap(entries=entries), links


def _edges_for(cfg: PipelineConfig, feature: str):
    if feature in ("bend", "abs_bend"):
        edges = analyze.default_bend_edges(cfg.bend_bin_width, cfg.bend_limit)
        return [e for e in edges if e >= 0] if feature == "abs_bend" else edges
    return analyze.default_slope_edges(cfg.slope_bin_width, cfg.slope_limit)


def run_analyze_feature(
    cfg: PipelineConfig, stats_path, feature, out_path, bin_edges=None, exclude_ids=None
) -> dict:
    rows = agg.read_link_stats(stats_path)
    pm, links = _pm_from_stats(rows)
    edges = bin_edges if bin_edges is not None else _edges_for(cfg, feature)
    kwargs = dict(
        min_bin_count=cfg.min_bin_count,
        bend_limit=cfg.bend_limit,
        n_boot=cfg.bootstrap_samples,
        seed=cfg.seed,
    )
    if exclude_ids:
        result = analyze.exclusion_experiment(pm, links, exclude_ids, feature, edges, **kwargs)
        analyze.write_binned_csv(result.with_all, _suffixed(out_path, "with"))
        analyze.write_binned_csv(result.without, out_path)
        return {"bins": len(result.without.n_links), "excluded": len(set(exclude_ids))}
    stat = analyze.bin_median_pflw(pm, links, feature, edges, **kwargs)
    analyze.write_binned_csv(stat, out_path)
    return {"bins": len(stat.n_links), "skipped_links": stat.n_skipped}


def _suffixed(path, tag):
    p = Path(path)
    return p.with_name(f"{p.stem}.{tag}{p.suffix}")


def run_heatmap(cfg: PipelineConfig, events_path, out_csv, out_geojson=None) -> dict:
    events = formats.read_events(events_path)
    grid = analyze.build_heatmap(events, cfg.heatmap_cell_m)
    analyze.write_heatmap_csv(grid, out_csv)
    if out_geojson is not None:
        analyze.heatmap_geojson(grid, out_geojson)
    return {"events": len(events), "cells": int((grid.counts > 0).sum())}


def run_export(cfg: PipelineConfig, stats_path, seg_map_path, out_geojson) -> dict:
    rows = agg.read_link_stats(stats_path)
    pm, _stat_links = _pm_from_stats(rows)
    links, _nodes = mapmodel.load_links(seg_map_path)
    links_by_id = {lk.link_id: lk for lk in links}
    agg.export_probability_map(pm, links_by_id, out_geojson)
    return {"features": pm.metadata.get("n_included", sum(e.included for e in pm.entries.values()))}


def run_simulate(scenario_doc: dict, out_traj, out_truth, out_map=None) -> dict:
    cfg = simulate.ScenarioConfig.from_dict(scenario_doc)
    truth = simulate.generate(cfg, out_traj, out_truth, out_map)
    return {"events": len(truth.events), "links": len(truth.link_rates)}


def run_all(cfg: PipelineConfig, scenario_doc: dict | None, out_dir, map_path=None,
            traj_path=None) -> dict:
    """Full chain into out_dir. Either a scenario (simulated input) or an
    existing trajectory file + map file must be provided."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = {}
    if scenario_doc is not None:
        traj_path = out / "trajectories.jsonl"
        map_path = out / "map.json"
        summary["simulate"] = run_simulate(scenario_doc, traj_path, out / "truth.json", map_path)
    if traj_path is None or map_path is None:
        raise ConfigError("run_all needs a scenario or both --traj and --map inputs")

    uniform_path = out / "uniform.jsonl"
    labeled_path = out / "labeled.jsonl"
    events_path = out / "events.jsonl"
    seg_map_path = out / "segmented-map.json"
    summary["ingest"] = run_ingest(cfg, traj_path, uniform_path)
    summary["detect"] = run_detect(cfg, uniform_path, labeled_path, events_path)
    summary["mapprep"] = run_mapprep(cfg, map_path, seg_map_path)
    summary["aggregate"] = run_aggregate(
        cfg, labeled_path, events_path, seg_map_path,
        out / "probability-map.geojson", out / "link_stats.csv",
    )
    summary["analyze_bend"] = run_analyze_feature(
        cfg, out / "link_stats.csv", "bend", out / "bend_vs_pflw.csv"
    )
    summary["analyze_slope"] = run_analyze_feature(
        cfg, out / "link_stats.csv", "slope_pct", out / "slope_vs_pflw.csv"
    )
    summary["heatmap"] = run_heatmap(
        cfg, events_path, out / "heatmap.csv", out / "heatmap.geojson"
    )
    return summary
