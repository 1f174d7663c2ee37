"""Per-link maneuver counting, density thresholding and probability export.

Counters form a commutative monoid (fieldwise integer addition), so samples
may be sharded across workers in any partition and merged in any order with a
bit-identical result.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .detect import Direction, LaneChangeEvent, ManeuverLabel
from .errors import FormatError
from .mapmodel import Link

DEFAULT_DENSITY_MIN = 10.0  # samples per meter of link


@dataclass
class LinkCounter:
    link_id: str
    meters: float
    n_lcl: int = 0
    n_flw: int = 0
    n_lcr: int = 0
    n_events_left: int = 0
    n_events_right: int = 0

    @property
    def total(self) -> int:
        return self.n_lcl + self.n_flw + self.n_lcr

    def merge(self, other: "LinkCounter") -> "LinkCounter":
        if other.link_id != self.link_id:
            raise ValueError(f"cannot merge counters for {self.link_id} and {other.link_id}")
        return replace(
            self,
            n_lcl=self.n_lcl + other.n_lcl,
            n_flw=self.n_flw + other.n_flw,
            n_lcr=self.n_lcr + other.n_lcr,
            n_events_left=self.n_events_left + other.n_events_left,
            n_events_right=self.n_events_right + other.n_events_right,
        )


@dataclass
class GlobalPriors:
    p_lcl: float = 0.03
    p_flw: float = 0.94
    p_lcr: float = 0.03

    def as_array(self) -> np.ndarray:
        return np.array([self.p_lcl, self.p_flw, self.p_lcr])


@dataclass
class LinkProbability:
    link_id: str
    p_lcl: float
    p_flw: float
    p_lcr: float
    density: float
    included: bool


@dataclass
class ProbabilityMap:
    entries: dict  # link_id -> LinkProbability (included and excluded)
    metadata: dict = field(default_factory=dict)

    def included(self):
        return {lid: e for lid, e in self.entries.items() if e.included}


def accumulate_samples(
    counters: dict, labels: np.ndarray, ordinals: np.ndarray, links: list[Link]
) -> int:
    """Fold one trajectory's labeled, matched samples into counters.

    Returns the number of unmatched samples (ordinal < 0), which are skipped.
    """
    matched = ordinals >= 0
    unmatched = int((~matched).sum())
    for code, attr in ((ManeuverLabel.LCL, "n_lcl"), (ManeuverLabel.FLW, "n_flw"),
                       (ManeuverLabel.LCR, "n_lcr")):
        sel = ordinals[matched & (labels == code)]
        if not len(sel):
            continue
        uniq, counts = np.unique(sel, return_counts=True)
        for o, c in zip(uniq, counts):
            lk = links[o]
            ctr = counters.get(lk.link_id)
            if ctr is None:
                ctr = counters[lk.link_id] = LinkCounter(lk.link_id, lk.length_m)
            setattr(ctr, attr, getattr(ctr, attr) + int(c))
    return unmatched


def accumulate_events(
    counters: dict, events: list[LaneChangeEvent], ordinals: np.ndarray, links: list[Link]
) -> int:
    """Add matched lane-change events to the per-link event tallies."""
    unmatched = 0
    for ev, o in zip(events, ordinals):
        if o < 0:
            unmatched += 1
            continue
        lk = links[o]
        ctr = counters.get(lk.link_id)
        if ctr is None:
            ctr = counters[lk.link_id] = LinkCounter(lk.link_id, lk.length_m)
        if ev.direction is Direction.LEFT:
            ctr.n_events_left += 1
        else:
            ctr.n_events_right += 1
    return unmatched


def merge_counter_maps(a: dict, b: dict) -> dict:
    out = {lid: replace(c) for lid, c in a.items()}
    for lid, ctr in b.items():
        out[lid] = out[lid].merge(ctr) if lid in out else replace(ctr)
    return out


def finalize(
    counters: dict, density_min: float = DEFAULT_DENSITY_MIN, metadata: dict | None = None
) -> ProbabilityMap:
    """Turn counters into per-link probabilities, flagging low-density links."""
    entries = {}
    totals = np.zeros(3, dtype=np.int64)
    for lid in sorted(counters):
        ctr = counters[lid]
        total = ctr.total
        density = total / ctr.meters if ctr.meters > 0 else 0.0
        if total == 0:
            entries[lid] = LinkProbability(lid, 0.0, 0.0, 0.0, 0.0, included=False)
            continue
        totals += (ctr.n_lcl, ctr.n_flw, ctr.n_lcr)
        entries[lid] = LinkProbability(
            link_id=lid,
            p_lcl=ctr.n_lcl / total,
            p_flw=ctr.n_flw / total,
            p_lcr=ctr.n_lcr / total,
            density=density,
            included=density >= density_min,
        )
    meta = dict(metadata or {})
    meta.update(
        density_min=density_min,
        total_lcl=int(totals[0]),
        total_flw=int(totals[1]),
        total_lcr=int(totals[2]),
        n_links=len(entries),
        n_included=sum(e.included for e in entries.values()),
    )
    return ProbabilityMap(entries=entries, metadata=meta)


def reweight_posteriors(balanced, priors) -> np.ndarray:
    """Rescale a balanced-classifier posterior by class priors.

    The balanced training prior is uniform over the 3 classes, so the output
    is proportional to balanced * prior, renormalized.
    """
    balanced = np.asarray(balanced, dtype=float)
    if isinstance(priors, (GlobalPriors, LinkProbability)):
        priors = np.array([priors.p_lcl, priors.p_flw, priors.p_lcr])
    else:
        priors = np.asarray(priors, dtype=float)
    w = balanced * priors
    s = w.sum()
    if s <= 0:
        raise ValueError("reweighted posterior has zero mass")
    return w / s


def _sorted_included(pm: ProbabilityMap):
    return sorted(pm.included().values(), key=lambda e: (-e.p_flw, e.link_id))


def export_probability_map(pm: ProbabilityMap, links_by_id: dict, path) -> None:
    """GeoJSON FeatureCollection of included links, descending p_flw."""
    features = []
    for e in _sorted_included(pm):
        lk = links_by_id.get(e.link_id)
        if lk is None:
            continue
        features.append(
            {
                "type": "Feature",
                "geometry": {
                    "type": "LineString",
                    "coordinates": [[float(lo), float(la)] for la, lo in zip(lk.lat, lk.lon)],
                },
                "properties": {
                    "link_id": e.link_id,
                    "p_lcl": e.p_lcl,
                    "p_flw": e.p_flw,
                    "p_lcr": e.p_lcr,
                    "bend": lk.bend,
                    "slope_pct": lk.slope_pct,
                    "density": e.density,
                },
            }
        )
    doc = {"type": "FeatureCollection", "metadata": pm.metadata, "features": features}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def read_probability_map(path) -> ProbabilityMap:
    """Re-import an exported GeoJSON probability map (round-trip support)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read probability map {path}: {exc}") from exc
    entries = {}
    for feat in doc.get("features", []):
        p = feat["properties"]
        entries[p["link_id"]] = LinkProbability(
            link_id=p["link_id"],
            p_lcl=p["p_lcl"],
            p_flw=p["p_flw"],
            p_lcr=p["p_lcr"],
            density=p["density"],
            included=True,
        )
    return ProbabilityMap(entries=entries, metadata=doc.get("metadata", {}))


STATS_COLUMNS = [
    "link_id", "n_lcl", "n_flw", "n_lcr", "density",
    "p_lcl", "p_flw", "p_lcr", "bend", "slope_pct", "included",
]


def write_link_stats(pm: ProbabilityMap, counters: dict, links_by_id: dict, path) -> None:
    """CSV with one row per link (included or not), descending p_flw."""
    rows = sorted(pm.entries.values(), key=lambda e: (-e.p_flw, e.link_id))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(STATS_COLUMNS)
        for e in rows:
            ctr = counters[e.link_id]
            lk = links_by_id.get(e.link_id)
            writer.writerow(
                [
                    e.link_id, ctr.n_lcl, ctr.n_flw, ctr.n_lcr, repr(e.density),
                    repr(e.p_lcl), repr(e.p_flw), repr(e.p_lcr),
                    "" if lk is None or lk.bend is None else repr(lk.bend),
                    "" if lk is None or lk.slope_pct is None else repr(lk.slope_pct),
                    int(e.included),
                ]
            )


def read_link_stats(path) -> list[dict]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for raw in reader:
            rows.append(
                {
                    "link_id": raw["link_id"],
                    "n_lcl": int(raw["n_lcl"]),
                    "n_flw": int(raw["n_flw"]),
                    "n_lcr": int(raw["n_lcr"]),
                    "density": float(raw["density"]),
                    "p_lcl": float(raw["p_lcl"]),
                    "p_flw": float(raw["p_flw"]),
                    "p_lcr": float(raw["p_lcr"]),
                    "bend": float(raw["bend"]) if raw["bend"] else None,
                    "slope_pct": float(raw["slope_pct"]) if raw["slope_pct"] else None,
                    "included": raw["included"] == "1",
                }
            )
    return rows
