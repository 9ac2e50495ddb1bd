import math

import numpy as np
import pytest

from veccache.mobility import (
    BoundingBox,
    GridParams,
    OffGridError,
    TraceFormatError,
    advance,
    assert_on_grid,
    ingest_trace,
    move_probability,
    random_grid_position,
    random_heading_for,
    step,
    stop_probability,
    write_trace,
)
from veccache.model import Content, Heading, Role, VehicleState

GRID = GridParams(intersection_density=1 / 200.0, wait_time_s=30.0, wait_prob=0.5,
                  block_size_m=200.0, map_extent_m=(1000.0, 1600.0))


def walker(pos=(200.0, 300.0), heading=Heading.NORTH, velocity=12.0, wait=0.0):
    return VehicleState("w", Role.PROVIDER, pos, heading, velocity,
                        cache_capacity=1.0, wait_remaining_s=wait)


class TestProbabilities:
    def test_no_waiting_always_moves(self):
        g = GridParams(1 / 200.0, 0.0, 0.5, 200.0, (1000.0, 1000.0))
        assert move_probability(g, 10.0) == 1.0
        assert stop_probability(g, 10.0) == 0.0

    def test_symmetric_case_is_half(self):
        # wait * prob * density * velocity = 2  ->  move probability 1/2
        g = GridParams(1 / 100.0, 20.0, 1.0, 100.0, (1000.0, 1000.0))
        assert move_probability(g, 10.0) == pytest.approx(0.5)
        assert stop_probability(g, 10.0) == pytest.approx(0.5)

    def test_complement_identity(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            g = GridParams(1 / 100.0, float(rng.uniform(0, 60)),
                           float(rng.uniform(0, 1)), 100.0, (1000.0, 1000.0))
            v = float(rng.uniform(0.5, 40.0))
            assert abs(move_probability(g, v) + stop_probability(g, v) - 1.0) < 1e-12

    def test_strictly_decreasing_in_each_factor(self):
        base = dict(density=1 / 100.0, wait=20.0, prob=0.5, v=10.0)

        def mp(density, wait, prob, v):
            g = GridParams(density, wait, prob, 1.0 / density, (1000.0, 1000.0))
            return move_probability(g, v)

        p0 = mp(base["density"], base["wait"], base["prob"], base["v"])
        assert mp(base["density"], base["wait"] * 2, base["prob"], base["v"]) < p0
        assert mp(base["density"], base["wait"], base["prob"] * 1.5, base["v"]) < p0
        assert mp(base["density"] * 2, base["wait"], base["prob"], base["v"]) < p0
        assert mp(base["density"], base["wait"], base["prob"], base["v"] * 2) < p0

    def test_velocity_must_be_positive(self):
        with pytest.raises(ValueError):
            move_probability(GRID, 0.0)
        with pytest.raises(ValueError):
            stop_probability(GRID, -1.0)

    def test_density_block_consistency_enforced(self):
        with pytest.raises(ValueError):
            GridParams(1 / 150.0, 30.0, 0.5, 200.0, (1000.0, 1000.0))


class TestStep:
    def test_zero_velocity_is_identity(self):
        w = walker(velocity=0.0)
        assert step(w, GRID, 1.0, np.random.default_rng(0)) == w

    def test_straight_segment_kinematics(self):
        w = walker(pos=(200.0, 300.0), heading=Heading.NORTH, velocity=12.0)
        out = step(w, GRID, 1.0, np.random.default_rng(0))
        assert out.position == (200.0, 312.0)
        assert out.heading is Heading.NORTH

    def test_position_stays_on_grid(self):
        rng = np.random.default_rng(42)
        w = walker(pos=random_grid_position(GRID, rng))
        w = VehicleState(w.vid, w.role, w.position,
                         random_heading_for(w.position, GRID, rng), 15.0,
                         cache_capacity=1.0)
        for _ in range(500):
            w = step(w, GRID, 3.0, rng)
            assert_on_grid(w.position, GRID)

    def test_off_grid_rejected(self):
        w = walker(pos=(123.0, 345.0))   # on neither street axis
        with pytest.raises(OffGridError):
            step(w, GRID, 1.0, np.random.default_rng(0))

    def test_waiting_consumes_time(self):
        w = walker(pos=(200.0, 300.0), wait=5.0)
        out = step(w, GRID, 2.0, np.random.default_rng(0))
        assert out.position == w.position
        assert out.wait_remaining_s == pytest.approx(3.0)

    @pytest.mark.parametrize("wait_time,wait_prob,velocity", [
        (30.0, 0.5, 12.0),
        (10.0, 1.0, 20.0),
        (60.0, 0.25, 8.0),
    ])
    def test_monte_carlo_stop_frequency(self, wait_time, wait_prob, velocity):
        g = GridParams(1 / 200.0, wait_time, wait_prob, 200.0, (1000.0, 1600.0))
        rng = np.random.default_rng(1234)
        w = walker(pos=(200.0, 200.0), velocity=velocity)
        arrivals = 0
        stops = 0
        dt = g.block_size_m / velocity + 1e-3
        while arrivals < 20_000:
            w, a, s = advance(w, g, dt, rng)
            arrivals += a
            stops += s
        expected = stop_probability(g, velocity)
        assert stops / arrivals == pytest.approx(expected, abs=0.01)


class TestTrace:
    BBOX = BoundingBox(40.668671, 40.678719, -73.950915, -73.930269)

    def test_single_record_constant_position(self, tmp_path):
        path = tmp_path / "t.csv"
        write_trace(path, [(0.0, "a", 40.67, -73.94)])
        pb = ingest_trace(path, self.BBOX)
        assert pb.vehicle_ids == ["a"]
        assert pb.position("a", 0.0) == pb.position("a", 100.0)

    def test_linear_interpolation_midpoint(self, tmp_path):
        path = tmp_path / "t.csv"
        write_trace(path, [(0.0, "a", 40.670, -73.940), (10.0, "a", 40.672, -73.940)])
        pb = ingest_trace(path, self.BBOX)
        x0, y0 = pb.position("a", 0.0)
        x1, y1 = pb.position("a", 10.0)
        xm, ym = pb.position("a", 5.0)
        assert xm == pytest.approx((x0 + x1) / 2, abs=1e-9)
        assert ym == pytest.approx((y0 + y1) / 2, abs=1e-9)

    def test_bbox_filter_drops_outside(self, tmp_path):
        path = tmp_path / "t.csv"
        write_trace(path, [(0.0, "a", 40.67, -73.94), (1.0, "b", 41.5, -73.94)])
        pb = ingest_trace(path, self.BBOX)
        assert pb.vehicle_ids == ["a"]

    def test_empty_result_is_error(self, tmp_path):
        path = tmp_path / "t.csv"
        write_trace(path, [(0.0, "b", 41.5, -73.94)])
        with pytest.raises(TraceFormatError):
            ingest_trace(path, self.BBOX)

    def test_malformed_row_reports_line(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("timestamp,vehicle_id,lat,lon\n0.0,a,40.67,-73.94\nnope,b\n")
        with pytest.raises(TraceFormatError, match="line 3"):
            ingest_trace(path, self.BBOX)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("time,vid,lat,lon\n")
        with pytest.raises(TraceFormatError, match="line 1"):
            ingest_trace(path, self.BBOX)

    def test_replay_deterministic(self, tmp_path):
        path = tmp_path / "t.csv"
        rng = np.random.default_rng(5)
        records = []
        for vid in ("a", "b", "c"):
            for t in range(20):
                records.append((float(t), vid,
                                40.6699 + rng.uniform(0, 0.008),
                                -73.9409 - rng.uniform(0, 0.009)))
        write_trace(path, records)
        p1 = ingest_trace(path, self.BBOX)
        p2 = ingest_trace(path, self.BBOX)
        for vid in p1.vehicle_ids:
            for t in np.linspace(0, 19, 40):
                assert p1.position(vid, t) == p2.position(vid, t)

    def test_projection_round_trip(self):
        lat, lon = 40.6731, -73.9402
        x, y = self.BBOX.to_xy(lat, lon)
        lat2, lon2 = self.BBOX.to_latlon(x, y)
        assert lat2 == pytest.approx(lat, abs=1e-12)
        assert lon2 == pytest.approx(lon, abs=1e-12)
