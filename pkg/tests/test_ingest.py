import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lcmap.errors import DegenerateInputError, FormatError
from lcmap.ingest import (
    RawTrajectory,
    parse_trajectory_file,
    resample_equidistant,
)


def write_lines(path, records):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def record(trip="a", t=0.0, lat=48.7, lon=9.1, dl=1.8, dr=-1.7, v=30.0, hdg=90.0):
    return {"trip": trip, "t": t, "lat": lat, "lon": lon, "dl": dl, "dr": dr, "v": v, "hdg": hdg}


def make_raw(t, **channels):
    t = np.asarray(t, dtype=float)
    n = len(t)
    defaults = dict(lat=48.7, lon=9.1, dist_left=1.8, dist_right=-1.7, speed=30.0, heading=90.0)
    defaults.update(channels)
    fields = {
        k: (np.full(n, float(v)) if np.ndim(v) == 0 else np.asarray(v, dtype=float))
        for k, v in defaults.items()
    }
    return RawTrajectory(trip_id="t", t=t, **fields)


class TestParse:
    def test_two_trips_ten_samples(self, tmp_path):
        recs = [record(trip=trip, t=0.1 * i) for trip in ("a", "b") for i in range(10)]
        path = tmp_path / "traj.jsonl"
        write_lines(path, recs)
        trajs, report = parse_trajectory_file(path)
        assert len(trajs) == 2
        assert all(tr.n == 10 for tr in trajs)
        assert report.dropped_lines == 0

    def test_out_of_range_latitude_dropped(self, tmp_path):
        recs = [record(t=0.0), record(t=0.1, lat=95.0), record(t=0.2)]
        path = tmp_path / "traj.jsonl"
        write_lines(path, recs)
        trajs, report = parse_trajectory_file(path)
        assert report.dropped_lines == 1
        assert trajs[0].n == 2

    def test_empty_file_is_format_error(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        with pytest.raises(FormatError):
            parse_trajectory_file(path)

    def test_all_malformed_is_format_error(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text("not json\n{\n")
        with pytest.raises(FormatError):
            parse_trajectory_file(path)

    def test_unsorted_input_gets_sorted(self, tmp_path):
        recs = [record(t=0.2), record(t=0.0), record(t=0.1)]
        path = tmp_path / "traj.jsonl"
        write_lines(path, recs)
        trajs, _ = parse_trajectory_file(path)
        assert list(trajs[0].t) == [0.0, 0.1, 0.2]

    def test_overlong_trip_rejected(self, tmp_path):
        recs = [record(t=0.0), record(t=201.0)]
        path = tmp_path / "traj.jsonl"
        write_lines(path, recs)
        trajs, report = parse_trajectory_file(path)
        assert trajs == []
        assert report.rejected_trips == ["a"]


class TestResample:
    def test_linear_interpolation(self):
        raw = make_raw([0.0, 0.1], dist_left=[0.0, 1.0])
        (out,) = resample_equidistant(raw)
        assert np.allclose(out.t, [0.0, 0.05, 0.1])
        assert np.allclose(out.dist_left, [0.0, 0.5, 1.0])

    def test_on_grid_input_is_identity(self):
        t = np.arange(100) * 0.05
        raw = make_raw(t, dist_left=np.sin(t), heading=(t * 40) % 360)
        (out,) = resample_equidistant(raw)
        assert np.array_equal(out.t, t)
        assert np.array_equal(out.dist_left, raw.dist_left)
        assert np.array_equal(out.heading, raw.heading)

    def test_heading_interpolates_across_north(self):
        raw = make_raw([0.0, 0.1], heading=[350.0, 10.0])
        (out,) = resample_equidistant(raw)
        # independent oracle: average of the two unit vectors
        vx = (math.sin(math.radians(350)) + math.sin(math.radians(10))) / 2
        vy = (math.cos(math.radians(350)) + math.cos(math.radians(10))) / 2
        expected = math.degrees(math.atan2(vx, vy)) % 360
        if expected >= 360.0:  # keep the oracle inside [0, 360)
            expected = 0.0
        assert out.heading[1] == pytest.approx(expected, abs=1e-9)
        assert out.heading[1] == pytest.approx(0.0, abs=1e-9)

    def test_gap_splits_trajectory(self):
        raw = make_raw([0.0, 0.1, 0.2, 1.5, 1.6])
        pieces = resample_equidistant(raw, gap_limit=1.0)
        assert len(pieces) == 2
        assert pieces[0].t0 == 0.0
        assert pieces[1].t0 == 1.5
        assert {p.trip_id for p in pieces} == {"t/0", "t/1"}

    def test_single_sample_rejected(self):
        with pytest.raises(DegenerateInputError):
            resample_equidistant(make_raw([0.0]))

    @given(
        st.lists(st.floats(0.01, 0.4), min_size=2, max_size=40),
        st.integers(0, 2**31),
    )
    @settings(max_examples=60, deadline=None)
    def test_idempotent_and_bounded(self, gaps, seed):
        rng = np.random.default_rng(seed)
        t = np.concatenate([[0.0], np.cumsum(gaps)])
        raw = make_raw(
            t,
            dist_left=rng.normal(1.8, 0.4, len(t)),
            speed=rng.uniform(20, 40, len(t)),
        )
        pieces = resample_equidistant(raw)
        for piece in pieces:
            # interpolation stays inside the raw envelope
            assert piece.dist_left.min() >= raw.dist_left.min() - 1e-12
            assert piece.dist_left.max() <= raw.dist_left.max() + 1e-12
            # output duration never exceeds input duration
            assert (piece.n - 1) * piece.dt <= raw.duration + 1e-9
            # resampling its own output changes nothing, bit for bit
            again = resample_equidistant(
                RawTrajectory(
                    trip_id=piece.trip_id, t=piece.t, lat=piece.lat, lon=piece.lon,
                    dist_left=piece.dist_left, dist_right=piece.dist_right,
                    speed=piece.speed, heading=piece.heading,
                )
            )
            assert len(again) == 1
            assert np.array_equal(again[0].t, piece.t)
            for name in ("lat", "lon", "dist_left", "dist_right", "speed", "heading"):
                assert np.array_equal(getattr(again[0], name), getattr(piece, name))
