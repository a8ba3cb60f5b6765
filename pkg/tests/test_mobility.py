"""Trace ingestion, slot-grid resampling and the synthetic junction generator."""

import math

import numpy as np
import pytest

from v2vmatch import mobility
from v2vmatch.geometry import Route, Vec2, load_buildings
from v2vmatch.mobility import (
    JunctionConfig, Scenario, TraceError, load_routes, load_scenario,
    load_traces, synth_junction, synth_junction_scenario, write_buildings_csv,
    write_routes_csv, write_trace_csv,
)

HEADER = mobility.TRACE_HEADER
COLS = ",".join(mobility.TRACE_COLUMNS)


def trace_file(tmp_path, body, name="trace.csv"):
    path = tmp_path / name
    path.write_text(HEADER + "\n" + COLS + "\n" + body)
    return str(path)


def row(t, vid, x, y, role="tx", heading=0.0, speed=10.0, length=4.5,
        width=1.8, quality=4):
    return (f"{t},{vid},{role},{x},{y},{heading},{speed},{length},"
            f"{width},{quality}\n")


class TestTraceParsing:
    def test_header_only_file_is_an_empty_scenario(self, tmp_path):
        path = trace_file(tmp_path, "")
        assert load_traces(path) == []

    def test_wrong_header_rejected_with_line_number(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("time,vehicle\n")
        with pytest.raises(TraceError, match=":1:"):
            load_scenario(str(path))

    def test_short_row_rejected_with_line_number(self, tmp_path):
        path = trace_file(tmp_path, "0.0,v0,tx,1.0\n")
        with pytest.raises(TraceError, match=":3:"):
            load_scenario(path)

    def test_bad_role_rejected(self, tmp_path):
        path = trace_file(tmp_path, row(0.0, "v0", 0, 0, role="relay"))
        with pytest.raises(TraceError, match="role"):
            load_scenario(path)

    def test_negative_time_rejected(self, tmp_path):
        path = trace_file(tmp_path, row(-1.0, "v0", 0, 0))
        with pytest.raises(TraceError, match="negative time"):
            load_scenario(path)

    def test_non_numeric_field_rejected(self, tmp_path):
        path = trace_file(tmp_path, "0.0,v0,tx,east,0,0,10,4.5,1.8,4\n")
        with pytest.raises(TraceError, match=":3:"):
            load_scenario(path)

    def test_metadata_change_mid_trace_rejected(self, tmp_path):
        body = row(0.0, "v0", 0, 0, quality=4) + row(1.0, "v0", 10, 0, quality=2)
        path = trace_file(tmp_path, body)
        with pytest.raises(TraceError, match="mid-trace"):
            load_scenario(path)

    def test_duplicate_sample_times_rejected(self, tmp_path):
        body = row(1.0, "v0", 0, 0) + row(1.0, "v0", 5, 0)
        path = trace_file(tmp_path, body)
        with pytest.raises(TraceError, match="duplicate sample times"):
            load_scenario(path)

    def test_vehicle_at_rest_for_one_second_gives_501_frames(self, tmp_path):
        body = row(0.0, "v0", 3.0, -2.0, speed=0.0) + \
            row(1.0, "v0", 3.0, -2.0, speed=0.0)
        frames = load_traces(trace_file(tmp_path, body))
        assert len(frames) == 501
        for frame in frames:
            assert len(frame.states) == 1
            st = frame.states[0]
            assert (st.footprint.center.x, st.footprint.center.y) == (3.0, -2.0)

    def test_linear_interpolation_between_samples(self, tmp_path):
        body = row(0.0, "v0", 0.0, 0.0) + row(1.0, "v0", 10.0, 0.0)
        scen = load_scenario(trace_file(tmp_path, body))
        st = scen.frame(scen.slot_of(0.5)).states[0]
        assert st.footprint.center.x == pytest.approx(5.0, rel=1e-9)

    def test_raw_samples_on_the_grid_are_preserved_exactly(self, tmp_path):
        body = row(0.0, "v0", 1.25, -7.5, heading=0.375, speed=12.5) + \
            row(0.5, "v0", 4.25, -7.5, heading=0.375, speed=12.5)
        scen = load_scenario(trace_file(tmp_path, body))
        st = scen.frame(0).states[0]
        assert st.footprint.center.x == 1.25
        assert st.footprint.center.y == -7.5
        assert st.footprint.heading == 0.375
        assert st.speed_mps == 12.5

    def test_presence_window_respects_raw_span(self, tmp_path):
        body = row(0.1, "v0", 0, 0) + row(0.2, "v0", 1, 0) + \
            row(0.0, "v1", 0, 5) + row(0.3, "v1", 3, 5)
        scen = load_scenario(trace_file(tmp_path, body))
        v0 = scen.vehicle("v0")
        assert v0.first_slot == 50 and v0.last_slot == 100
        assert scen.n_slots == 151
        assert [st.vehicle_id for st in scen.frame(0).states] == ["v1"]
        assert len(scen.frame(75).states) == 2

    def test_unknown_vehicle_in_route_file_rejected(self, tmp_path):
        tpath = trace_file(tmp_path, row(0.0, "v0", 0, 0) + row(1.0, "v0", 8, 0))
        rpath = tmp_path / "routes.csv"
        rpath.write_text(mobility.ROUTES_HEADER + "\nghost,W,E,0,0;50,0\n")
        with pytest.raises(TraceError, match="unknown vehicle"):
            load_scenario(tpath, str(rpath))

    def test_route_file_round_trip_and_planned_route_lookahead(self, tmp_path):
        tpath = trace_file(tmp_path, row(0.0, "v0", 0, 0) + row(1.0, "v0", 10, 0))
        rpath = tmp_path / "routes.csv"
        rpath.write_text(mobility.ROUTES_HEADER + "\nv0,W,E,0,0;200,0\n")
        scen = load_scenario(tpath, str(rpath))
        v = scen.vehicle("v0")
        assert v.src_dst == ("W", "E")
        fut = scen.future_route("v0", 1.0, horizon=100.0)
        assert fut.length() == pytest.approx(100.0, rel=1e-9)
        past = scen.past_trace("v0", 1.0, window=100.0)
        assert past.length() == pytest.approx(10.0, rel=1e-9)

    def test_route_parse_errors(self, tmp_path):
        rpath = tmp_path / "routes.csv"
        rpath.write_text("#nope\n")
        with pytest.raises(TraceError, match=":1:"):
            load_routes(str(rpath))
        rpath.write_text(mobility.ROUTES_HEADER + "\nv0,W,E\n")
        with pytest.raises(TraceError, match=":2:"):
            load_routes(str(rpath))
        rpath.write_text(mobility.ROUTES_HEADER + "\nv0,W,E,0,0;bad\n")
        with pytest.raises(TraceError, match="polyline"):
            load_routes(str(rpath))
        rpath.write_text(mobility.ROUTES_HEADER +
                         "\nv0,W,E,0,0;9,0\nv0,W,E,0,0;9,0\n")
        with pytest.raises(TraceError, match="duplicate route"):
            load_routes(str(rpath))


class TestScenarioQueries:
    def simple(self, tmp_path):
        body = row(0.0, "v0", 0, 0) + row(2.0, "v0", 24, 0)
        return load_scenario(trace_file(tmp_path, body))

    def test_slot_of_grid_validation(self, tmp_path):
        scen = self.simple(tmp_path)
        assert scen.slot_of(0.002) == 1
        with pytest.raises(ValueError, match="slot grid"):
            scen.slot_of(0.0005)
        with pytest.raises(ValueError, match="horizon"):
            scen.slot_of(1e6)

    def test_unknown_vehicle_lookup(self, tmp_path):
        scen = self.simple(tmp_path)
        with pytest.raises(KeyError, match="unknown vehicle"):
            scen.past_trace("ghost", 0.0)

    def test_just_spawned_vehicle_has_point_past(self, tmp_path):
        scen = self.simple(tmp_path)
        past = scen.past_trace("v0", 0.0, window=50.0)
        assert past.length() == 0.0

    def test_straight_mover_past_window(self, tmp_path):
        body = row(0.0, "v0", 0, 0, speed=12.0) + row(10.0, "v0", 120, 0,
                                                      speed=12.0)
        scen = load_scenario(trace_file(tmp_path, body))
        past = scen.past_trace("v0", 10.0, window=50.0)
        assert past.length() == pytest.approx(50.0, abs=1e-9)
        fut = scen.future_route("v0", 0.0, horizon=50.0)
        assert fut.length() == pytest.approx(50.0, abs=1e-9)

    def test_duplicate_vehicle_ids_rejected(self):
        v = mobility.ScenarioVehicle(
            vehicle_id="v0", role="tx", length=4.5, width=1.8, quality=4,
            route=Route([Vec2(0, 0), Vec2(9, 0)]), src_dst=("", ""),
            first_slot=0, xs=np.zeros(2), ys=np.zeros(2),
            headings=np.zeros(2), speeds=np.zeros(2),
            path=Route([Vec2(0, 0), Vec2(9, 0)]), path_arc=np.zeros(2))
        with pytest.raises(ValueError, match="duplicate vehicle ids"):
            Scenario(2e-3, 2, [v, v], mobility.BuildingMap())


def small_cfg(**kw):
    base = dict(n_tx=6, n_rx=5, duration_s=8.0, signal_period_s=10.0)
    base.update(kw)
    return JunctionConfig(**base)


class TestSynthJunction:
    def test_same_seed_bit_identical(self):
        a = synth_junction_scenario(small_cfg(), 42)
        b = synth_junction_scenario(small_cfg(), 42)
        assert [v.vehicle_id for v in a.vehicles] == \
            [v.vehicle_id for v in b.vehicles]
        for va, vb in zip(a.vehicles, b.vehicles):
            assert va.role == vb.role and va.quality == vb.quality
            assert np.array_equal(va.xs, vb.xs)
            assert np.array_equal(va.ys, vb.ys)
            assert np.array_equal(va.headings, vb.headings)
            assert np.array_equal(va.speeds, vb.speeds)

    def test_role_split_matches_requested_counts(self):
        scen = synth_junction_scenario(small_cfg(), 3)
        roles = [v.role for v in scen.vehicles]
        assert roles.count(mobility.ROLE_TX) == 6
        assert roles.count(mobility.ROLE_RX) == 5
        assert all(1 <= v.quality <= 4 for v in scen.vehicles)

    def test_frame_population_and_lane_adherence(self):
        scen = synth_junction_scenario(small_cfg(), 9)
        total = scen.vehicles
        assert len(total) == 11
        for slot in range(0, scen.n_slots, 500):
            frame = scen.frame(slot)
            assert len(frame.states) <= 11
            for st in frame.states:
                v = scen.vehicle(st.vehicle_id)
                arc = mobility._project_arc(v.route, st.footprint.center.x,
                                            st.footprint.center.y)
                p = v.route.point_at(arc)
                d = math.hypot(p.x - st.footprint.center.x,
                               p.y - st.footprint.center.y)
                assert d <= 0.1

    def test_arcs_monotone_and_speeds_bounded(self):
        cfg = small_cfg()
        scen = synth_junction_scenario(cfg, 5)
        for v in scen.vehicles:
            assert np.all(np.diff(v.path_arc) >= -1e-12)
            assert np.all(v.speeds >= -1e-12)
            assert np.max(v.speeds) <= cfg.speed_max_mps + 1e-9

    def test_red_phase_holds_vehicles_at_stop_line(self):
        cfg = small_cfg(duration_s=4.0, signal_period_s=40.0)
        scen = synth_junction_scenario(cfg, 11)
        s_stop = cfg.arm_m - cfg.stop_offset_m
        # east-west arms face red while the north-south phase is green
        for v in scen.vehicles:
            if v.src_dst[0] not in ("W", "E"):
                continue
            start = v.path_arc[0]
            for slot in range(0, min(scen.n_slots, len(v.path_arc)), 250):
                assert v.path_arc[slot] <= s_stop - v.length / 2.0 + 1e-9
                assert v.path_arc[slot] >= start - 1e-12

    def test_green_phase_releases_the_queue(self):
        cfg = small_cfg(duration_s=12.0, signal_period_s=8.0)
        scen = synth_junction_scenario(cfg, 11)
        crossed = 0
        s_stop = cfg.arm_m - cfg.stop_offset_m
        for v in scen.vehicles:
            if float(v.path_arc[-1]) > s_stop:
                crossed += 1
        assert crossed > 0

    def test_no_overtaking_within_a_shared_exit_lane(self):
        cfg = small_cfg(n_tx=14, n_rx=12, duration_s=16.0, signal_period_s=8.0)
        scen = synth_junction_scenario(cfg, 21)
        groups: dict[tuple[str, str], list] = {}
        for v in scen.vehicles:
            groups.setdefault(v.src_dst, []).append(v)
        checked = 0
        for group in groups.values():
            for a in group:
                for b in group:
                    if a is b:
                        continue
                    lo = max(a.first_slot, b.first_slot)
                    hi = min(a.last_slot, b.last_slot)
                    if lo > hi:
                        continue
                    sa = a.path_arc[lo - a.first_slot:hi - a.first_slot + 1]
                    sb = b.path_arc[lo - b.first_slot:hi - b.first_slot + 1]
                    gap = (a.length + b.length) / 2.0 + cfg.min_gap_m
                    assert np.min(np.abs(sa - sb)) >= gap - 1e-9
                    checked += 1
        assert checked > 0

    def test_infeasible_spawn_density_rejected(self):
        with pytest.raises(ValueError, match="infeasible spawn density"):
            synth_junction_scenario(JunctionConfig(n_tx=70, n_rx=70), 1)

    def test_exit_leg_bounds_the_observed_region(self):
        cfg = small_cfg(duration_s=25.0, signal_period_s=8.0, exit_m=30.0)
        scen = synth_junction_scenario(cfg, 13)
        assert any(v.last_slot < scen.n_slots - 1 for v in scen.vehicles)
        bound = cfg.box_half_m + cfg.exit_m + 1e-6
        for v in scen.vehicles:
            assert np.all(np.abs(v.xs) <= cfg.box_half_m + cfg.arm_m + 1e-6)
            inside = (np.abs(v.xs) <= cfg.box_half_m + 1e-6)
            assert np.all((np.abs(v.ys) <= bound) | inside
                          | (np.abs(v.ys) <= cfg.box_half_m + cfg.arm_m))

    def test_turning_vehicle_past_trace_arc_length(self):
        cfg = small_cfg(duration_s=20.0, signal_period_s=8.0)
        scen = synth_junction_scenario(cfg, 29)
        turner = None
        for v in scen.vehicles:
            moved = float(v.path_arc[-1] - v.path_arc[0])
            if v.src_dst[0] != v.src_dst[1] and moved > 40.0 \
                    and len(v.route.waypoints) > 2:
                turner = v
                break
        assert turner is not None
        t = (turner.first_slot + len(turner.xs) - 1) * scen.slot_s
        past = scen.past_trace(turner.vehicle_id, t, window=30.0)
        step = cfg.speed_max_mps * cfg.slot_s
        assert past.length() == pytest.approx(30.0, abs=step + 1e-9)

    def test_frames_and_buildings_view(self):
        frames, buildings = synth_junction(small_cfg(duration_s=2.0), 7)
        assert len(frames) == 1001
        # four corner blocks plus one median strip per arm
        assert len(buildings.polygons) == 8
        assert len(synth_junction(
            small_cfg(duration_s=2.0, median_halfwidth_m=0.0), 7)[1].polygons) == 4

    def test_medians_hug_centerline_outside_box(self):
        cfg = small_cfg()
        start = cfg.box_half_m + cfg.median_setback_m
        for poly in junction_buildings(cfg).polygons[4:]:
            xs = sorted(p.x for p in poly)
            ys = sorted(p.y for p in poly)
            if abs(xs[0]) <= cfg.median_halfwidth_m and \
                    abs(xs[-1]) <= cfg.median_halfwidth_m:
                along = ys  # strip runs north-south
            else:
                along = xs
                assert abs(ys[0]) <= cfg.median_halfwidth_m
                assert abs(ys[-1]) <= cfg.median_halfwidth_m
            assert along[0] >= start or along[-1] <= -start
            # narrower than the lane offset, so wheels never touch it
            assert cfg.median_halfwidth_m < cfg.lane_offset_m

    def test_geometry_validation(self):
        with pytest.raises(ValueError):
            JunctionConfig(arm_m=15.0)
        with pytest.raises(ValueError):
            JunctionConfig(exit_m=0.0)
        with pytest.raises(ValueError):
            JunctionConfig(speed_min_mps=0.0)
        with pytest.raises(ValueError):
            JunctionConfig(n_tx=0)


class TestWriters:
    def test_trace_round_trip_reproduces_motion(self, tmp_path):
        scen = synth_junction_scenario(small_cfg(duration_s=3.0), 17)
        tpath = tmp_path / "dump.csv"
        rpath = tmp_path / "routes.csv"
        bpath = tmp_path / "buildings.csv"
        write_trace_csv(scen.frames(), str(tpath))
        write_routes_csv(scen, str(rpath))
        write_buildings_csv(scen.buildings, str(bpath))
        again = load_scenario(str(tpath), str(rpath))
        assert sorted(v.vehicle_id for v in again.vehicles) == \
            sorted(v.vehicle_id for v in scen.vehicles)
        assert again.n_slots == scen.n_slots
        for v in scen.vehicles:
            w = again.vehicle(v.vehicle_id)
            assert w.role == v.role and w.quality == v.quality
            assert w.src_dst == v.src_dst
            assert w.first_slot == v.first_slot
            assert np.allclose(w.xs, v.xs, atol=2e-6)
            assert np.allclose(w.ys, v.ys, atol=2e-6)
        reloaded = load_buildings(str(bpath))
        assert len(reloaded.polygons) == len(scen.buildings.polygons)
