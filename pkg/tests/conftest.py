import numpy as np
import pytest

from lcmap.ingest import UniformTrajectory


def make_uniform(trip_id="t0", dt=0.05, n=200, t0=0.0, lat0=48.7, lon0=9.1,
                 dl=1.8, dr=-1.7, speed=30.0, heading=90.0):
    """Constant-signal uniform trajectory, channels overridable with arrays."""
    def arr(v):
        a = np.asarray(v, dtype=float)
        return np.full(n, float(v)) if a.ndim == 0 else a.copy()

    return UniformTrajectory(
        trip_id=trip_id, t0=t0, dt=dt,
        lat=arr(lat0), lon=arr(lon0),
        dist_left=arr(dl), dist_right=arr(dr),
        speed=arr(speed), heading=arr(heading),
    )


def left_change_signal(n=400, dt=0.05, cross_idx=200, lane_width=3.5, approach_s=2.0):
    """Marking distances for one ideal left lane change crossing at cross_idx."""
    dl = np.full(n, 1.8)
    dr = np.full(n, -1.7)
    k = int(approach_s / dt)
    ramp = np.linspace(1.8, -0.05, k, endpoint=False)
    dl[cross_idx - k:cross_idx] = ramp
    dr[cross_idx - k:cross_idx] = -1.7 - (1.8 - ramp)
    dl[cross_idx:] = 1.8 + lane_width - 1.85  # re-locked to the next lane
    dr[cross_idx:] = -0.05
    settle = np.linspace(-0.05, -1.7, min(40, n - cross_idx))
    dr[cross_idx:cross_idx + len(settle)] = settle
    dl[cross_idx:cross_idx + len(settle)] = lane_width + settle
    return dl, dr


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
