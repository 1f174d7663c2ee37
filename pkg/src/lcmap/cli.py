"""Command-line entry point exposing the pipeline stages as subcommands.

Exit codes: 0 success, 1 runtime error, 2 usage error. Parameters resolve
with flag > LCMAP_* env var > config file > built-in default precedence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time

from .config import load_config_file, resolve_config
from .errors import LcmapError
from . import pipeline

log = logging.getLogger("lcmap")

_CONFIG_FLAGS = [
    ("--dt", "dt", float), ("--gap-limit", "gap_limit", float),
    ("--horizon", "horizon_s", float), ("--jump-min", "jump_min", float),
    ("--jump-max", "jump_max", float), ("--cross-eps", "cross_eps", float),
    ("--settle-window", "settle_window", float), ("--min-event-gap", "min_event_gap", float),
    ("--seg-len", "seg_len", float), ("--density-min", "density_min", float),
    ("--match-radius", "match_radius", float), ("--heading-tol", "heading_tol", float),
    ("--proximity-radius", "proximity_radius", float), ("--cell", "heatmap_cell_m", float),
    ("--min-bin-count", "min_bin_count", int), ("--bootstrap", "bootstrap_samples", int),
    ("--seed", "seed", int), ("--threads", "threads", int),
]


def _add_common(sub):
    sub.add_argument("--config", help="TOML or JSON config file")
    for flag, dest, kind in _CONFIG_FLAGS:
        sub.add_argument(flag, dest=dest, type=kind, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lcmap", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("simulate", help="generate a synthetic fleet scenario")
    _add_common(p)
    p.add_argument("--out-traj", required=True)
    p.add_argument("--out-truth", required=True)
    p.add_argument("--out-map")

    p = subs.add_parser("ingest", help="parse raw trajectories, resample to the 50 ms grid")
    _add_common(p)
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True)

    p = subs.add_parser("detect", help="detect lane changes and label samples")
    _add_common(p)
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True, help="labeled samples (jsonl)")
    p.add_argument("--out-events", required=True)

    p = subs.add_parser("mapprep", help="resegment the map to equal-length links")
    _add_common(p)
    p.add_argument("--map", required=True)
    p.add_argument("--out", required=True)

    p = subs.add_parser("aggregate", help="map-match, count and emit the probability map")
    _add_common(p)
    p.add_argument("--labeled", required=True)
    p.add_argument("--events")
    p.add_argument("--map", required=True, help="resegmented map (mapprep output)")
    p.add_argument("--out-geojson", required=True)
    p.add_argument("--out-csv", required=True)

    p = subs.add_parser("analyze", help="feature-binned median analyses")
    _add_common(p)
    p.add_argument("--stats", required=True, help="link_stats.csv from aggregate")
    p.add_argument("--feature", required=True, choices=["bend", "slope", "abs-bend"])
    p.add_argument("--bins", default="auto", help='"auto" or comma-separated edges')
    p.add_argument("--exclude-ids", help="file with one link id per line")
    p.add_argument("--out", required=True)

    p = subs.add_parser("heatmap", help="grid the detected lane changes")
    _add_common(p)
    p.add_argument("--events", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--out-geojson")

    p = subs.add_parser("export", help="re-export a probability map as GeoJSON")
    _add_common(p)
    p.add_argument("--stats", required=True)
    p.add_argument("--map", required=True)
    p.add_argument("--out", required=True)

    p = subs.add_parser("all", help="run the whole chain into an output directory")
    _add_common(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--traj", help="existing trajectory file (otherwise the config scenario)")
    p.add_argument("--map", help="existing map file")
    return parser


_FEATURE_NAMES = {"bend": "bend", "slope": "slope_pct", "abs-bend": "abs_bend"}


def _dispatch(args) -> dict:
    overrides = {dest: getattr(args, dest, None) for _f, dest, _k in _CONFIG_FLAGS}
    cfg = resolve_config(args.config, overrides)

    if args.command == "simulate":
        if not args.config:
            raise LcmapError("simulate needs --config with a [scenario] section")
        doc = load_config_file(args.config)
        if "scenario" not in doc:
            raise LcmapError(f"no [scenario] section in {args.config}")
        return pipeline.run_simulate(doc["scenario"], args.out_traj, args.out_truth, args.out_map)
    if args.command == "ingest":
        return pipeline.run_ingest(cfg, args.in_path, args.out)
    if args.command == "detect":
        return pipeline.run_detect(cfg, args.in_path, args.out, args.out_events)
    if args.command == "mapprep":
        return pipeline.run_mapprep(cfg, args.map, args.out)
    if args.command == "aggregate":
        return pipeline.run_aggregate(
            cfg, args.labeled, args.events, args.map, args.out_geojson, args.out_csv
        )
    if args.command == "analyze":
        edges = None
        if args.bins != "auto":
            edges = [float(v) for v in args.bins.split(",")]
        exclude = None
        if args.exclude_ids:
            with open(args.exclude_ids, "r", encoding="utf-8") as fh:
                exclude = [line.strip() for line in fh if line.strip()]
        return pipeline.run_analyze_feature(
            cfg, args.stats, _FEATURE_NAMES[args.feature], args.out, edges, exclude
        )
    if args.command == "heatmap":
        return pipeline.run_heatmap(cfg, args.events, args.out, args.out_geojson)
    if args.command == "export":
        return pipeline.run_export(cfg, args.stats, args.map, args.out)
    if args.command == "all":
        scenario = None
        if args.traj is None:
            if not args.config:
                raise LcmapError("all needs --config with a [scenario] section, or --traj/--map")
            doc = load_config_file(args.config)
            scenario = doc.get("scenario")
            if scenario is None and args.map is None:
                raise LcmapError(f"no [scenario] section in {args.config} and no --traj/--map")
        return pipeline.run_all(cfg, scenario, args.out_dir, args.map, args.traj)
    raise LcmapError(f"unhandled command {args.command}")  # pragma: no cover


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    start = time.perf_counter()
    try:
        summary = _dispatch(args)
    except FileNotFoundError as exc:
        print(f"error: input file not found: {exc.filename or exc}", file=sys.stderr)
        return 1
    except LcmapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    summary["elapsed_s"] = round(time.perf_counter() - start, 3)
    print(json.dumps({args.command: summary}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
