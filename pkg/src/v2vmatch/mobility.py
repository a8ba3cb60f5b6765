"""Vehicle mobility: trace ingestion, slot-grid resampling and a synthetic junction."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import BuildingMap, Footprint, Route, Vec2

ROLE_TX = "tx"
ROLE_RX = "rx"

TRACE_HEADER = "#trace v1"
ROUTES_HEADER = "#routes v1"
BUILDINGS_HEADER = "#buildings v1"

TRACE_COLUMNS = ("time_s", "vehicle_id", "role", "x_m", "y_m", "heading_rad",
                 "speed_mps", "length_m", "width_m", "quality")


class TraceError(ValueError):
    """Malformed trace/route input, message carries file and line."""


@dataclass
class VehicleState:
    """One vehicle in one frame."""

    vehicle_id: str
    role: str
    footprint: Footprint
    speed_mps: float
    quality: int
    route: Route
    src_dst: tuple[str, str] = ("", "")


@dataclass
class TraceFrame:
    time_s: float
    states: list[VehicleState]


@dataclass
class ScenarioVehicle:
    """Compact per-vehicle time series over its presence window."""

    vehicle_id: str
    role: str
    length: float
    width: float
    quality: int
    route: Route
    src_dst: tuple[str, str]
    first_slot: int
    xs: np.ndarray
    ys: np.ndarray
    headings: np.ndarray
    speeds: np.ndarray
    path: Route
    path_arc: np.ndarray
    path_start_arc: float = 0.0

    @property
    def last_slot(self) -> int:
        return self.first_slot + len(self.xs) - 1

    def present(self, slot: int) -> bool:
        return self.first_slot <= slot <= self.last_slot


class Scenario:
    """A building map plus vehicle time series sampled on the slot grid."""

    def __init__(self, slot_s: float, n_slots: int, vehicles: list[ScenarioVehicle],
                 buildings: BuildingMap):
        if slot_s <= 0:
            raise ValueError("slot duration must be positive")
        self.slot_s = slot_s
        self.n_slots = n_slots
        self.vehicles = vehicles
        self.buildings = buildings
        self._by_id = {v.vehicle_id: v for v in vehicles}
        if len(self._by_id) != len(vehicles):
            raise ValueError("duplicate vehicle ids in scenario")

    def vehicle(self, vehicle_id: str) -> ScenarioVehicle:
        try:
            return self._by_id[vehicle_id]
        except KeyError:
            raise KeyError(f"unknown vehicle id {vehicle_id!r}") from None

    def slot_of(self, t: float) -> int:
        slot = t / self.slot_s
        if abs(slot - round(slot)) > 1e-6:
            raise ValueError(f"time {t} is not on the {self.slot_s}s slot grid")
        slot = int(round(slot))
        if not 0 <= slot < self.n_slots:
            raise ValueError(f"time {t} outside the scenario horizon")
        return slot

    def present_vehicles(self, slot: int) -> list[ScenarioVehicle]:
        return [v for v in self.vehicles if v.present(slot)]

    def state_at(self, v: ScenarioVehicle, slot: int) -> VehicleState:
        i = slot - v.first_slot
        fp = Footprint(Vec2(float(v.xs[i]), float(v.ys[i])), float(v.headings[i]),
                       v.length, v.width)
        return VehicleState(v.vehicle_id, v.role, fp, float(v.speeds[i]), v.quality,
                            v.route, v.src_dst)

    def frame(self, slot: int) -> TraceFrame:
        states = [self.state_at(v, slot) for v in self.vehicles if v.present(slot)]
        return TraceFrame(slot * self.slot_s, states)

    def frames(self) -> list[TraceFrame]:
        return [self.frame(s) for s in range(self.n_slots)]

    def past_trace(self, vehicle_id: str, t: float, window: float = 100.0) -> Route:
        """Polyline actually driven over the last `window` meters, most recent last.

        A vehicle that has not moved yet yields a single-point route.
        """
        v = self.vehicle(vehicle_id)
        slot = self.slot_of(t)
        if not v.present(slot):
            raise KeyError(f"vehicle {vehicle_id!r} absent at t={t}")
        s_now = float(v.path_arc[slot - v.first_slot])
        s_lo = max(v.path_start_arc, s_now - window)
        return v.path.sub_route(s_lo, s_now)

    def future_route(self, vehicle_id: str, t: float, horizon: float = 100.0) -> Route:
        """Remaining planned route ahead of the vehicle, truncated to `horizon` meters."""
        v = self.vehicle(vehicle_id)
        slot = self.slot_of(t)
        if not v.present(slot):
            raise KeyError(f"vehicle {vehicle_id!r} absent at t={t}")
        if v.route is v.path:
            s_here = float(v.path_arc[slot - v.first_slot])
        else:
            i = slot - v.first_slot
            s_here = _project_arc(v.route, float(v.xs[i]), float(v.ys[i]))
        return v.route.sub_route(s_here, min(s_here + horizon, v.route.length()))


def _project_arc(route: Route, x: float, y: float) -> float:
    """Arc position of the route point nearest to (x, y)."""
    xs = route._xs
    ys = route._ys
    if len(xs) < 2:
        return 0.0
    dx = np.diff(xs)
    dy = np.diff(ys)
    len2 = dx * dx + dy * dy
    t = np.clip(((x - xs[:-1]) * dx + (y - ys[:-1]) * dy) / len2, 0.0, 1.0)
    ex = xs[:-1] + t * dx - x
    ey = ys[:-1] + t * dy - y
    i = int(np.argmin(ex * ex + ey * ey))
    return float(route.cum_lengths[i] + t[i] * math.sqrt(len2[i]))


# ---------------------------------------------------------------------------
# trace files

def _parse_trace_rows(path: str):
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        first = fh.readline().strip()
        if first != TRACE_HEADER:
            raise TraceError(f"{path}:1: expected {TRACE_HEADER!r} header, got {first!r}")
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=2):
            if not row or (row[0].startswith("#")):
                continue
            if row[0].strip() == "time_s":
                continue
            if len(row) != len(TRACE_COLUMNS):
                raise TraceError(f"{path}:{lineno}: expected {len(TRACE_COLUMNS)} "
                                 f"columns, got {len(row)}")
            try:
                rows.append((float(row[0]), row[1].strip(), row[2].strip(),
                             float(row[3]), float(row[4]), float(row[5]),
                             float(row[6]), float(row[7]), float(row[8]),
                             int(row[9])))
            except ValueError as exc:
                raise TraceError(f"{path}:{lineno}: {exc}") from None
            t, vid, role = rows[-1][0], rows[-1][1], rows[-1][2]
            if t < 0:
                raise TraceError(f"{path}:{lineno}: negative time {t}")
            if role not in (ROLE_TX, ROLE_RX):
                raise TraceError(f"{path}:{lineno}: role must be 'tx' or 'rx', got {role!r}")
            if not vid:
                raise TraceError(f"{path}:{lineno}: empty vehicle id")
    return rows


def load_routes(path: str) -> dict[str, tuple[str, str, Route]]:
    """Read a '#routes v1' file: vehicle_id,src,dst,x1,y1;x2,y2;..."""
    out: dict[str, tuple[str, str, Route]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline().strip()
        if first != ROUTES_HEADER:
            raise TraceError(f"{path}:1: expected {ROUTES_HEADER!r} header, got {first!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",", 3)
            if len(parts) != 4:
                raise TraceError(f"{path}:{lineno}: expected id,src,dst,polyline")
            vid, src, dst, poly = (p.strip() for p in parts)
            try:
                pts = [Vec2(*map(float, pair.split(","))) for pair in poly.split(";")]
            except (TypeError, ValueError) as exc:
                raise TraceError(f"{path}:{lineno}: bad polyline: {exc}") from None
            if vid in out:
                raise TraceError(f"{path}:{lineno}: duplicate route for {vid!r}")
            out[vid] = (src, dst, Route(pts))
    return out


def load_scenario(trace_path: str, route_path: str | None = None,
                  buildings: BuildingMap | None = None,
                  slot_s: float = 2e-3) -> Scenario:
    """Build a scenario from trace rows resampled onto the slot grid.

    Positions, headings and speeds interpolate linearly between raw samples,
    so values at raw sample times are reproduced exactly. A vehicle is present
    on every grid slot inside its raw time span. Vehicles named in the route
    file but absent from the trace are an error; vehicles without a planned
    route fall back to their driven polyline.
    """
    rows = _parse_trace_rows(trace_path)
    routes = load_routes(route_path) if route_path else {}
    if not rows:
        if routes:
            raise TraceError(f"{route_path}: routes reference an empty trace")
        return Scenario(slot_s, 0, [], buildings or BuildingMap())

    per_vehicle: dict[str, list] = {}
    meta: dict[str, tuple] = {}
    for t, vid, role, x, y, heading, speed, length, width, quality in rows:
        per_vehicle.setdefault(vid, []).append((t, x, y, heading, speed))
        m = (role, length, width, quality)
        if vid in meta and meta[vid] != m:
            raise TraceError(f"{trace_path}: vehicle {vid!r} changes "
                             "role/dimensions/quality mid-trace")
        meta[vid] = m
        if quality < 1:
            raise TraceError(f"{trace_path}: vehicle {vid!r} has quality < 1")
        if length <= 0 or width <= 0:
            raise TraceError(f"{trace_path}: vehicle {vid!r} has non-positive size")
    for vid in routes:
        if vid not in per_vehicle:
            raise TraceError(f"{route_path}: route references unknown vehicle {vid!r}")

    t_max = max(t for t, *_ in rows)
    n_slots = int(math.floor(t_max / slot_s + 1e-9)) + 1
    vehicles = []
    for vid in sorted(per_vehicle):
        samples = sorted(per_vehicle[vid])
        ts = np.array([s[0] for s in samples])
        if len(ts) > 1 and np.any(np.diff(ts) <= 0):
            raise TraceError(f"{trace_path}: vehicle {vid!r} has duplicate sample times")
        first = int(math.ceil(ts[0] / slot_s - 1e-9))
        last = int(math.floor(ts[-1] / slot_s + 1e-9))
        if last < first:
            continue  # span too short to land on any grid slot
        grid_t = np.arange(first, last + 1) * slot_s
        xs_raw = np.array([s[1] for s in samples])
        ys_raw = np.array([s[2] for s in samples])
        hd_raw = np.unwrap(np.array([s[3] for s in samples]))
        sp_raw = np.array([s[4] for s in samples])
        xs = np.interp(grid_t, ts, xs_raw)
        ys = np.interp(grid_t, ts, ys_raw)
        headings = np.interp(grid_t, ts, hd_raw)
        speeds = np.interp(grid_t, ts, sp_raw)
        arc_raw = np.concatenate(([0.0], np.cumsum(np.hypot(np.diff(xs_raw),
                                                            np.diff(ys_raw)))))
        path = Route([Vec2(x, y) for x, y in zip(xs_raw, ys_raw)])
        role, length, width, quality = meta[vid]
        src, dst, route = routes.get(vid, ("", "", path))
        vehicles.append(ScenarioVehicle(
            vehicle_id=vid, role=role, length=length, width=width, quality=quality,
            route=route, src_dst=(src, dst), first_slot=first,
            xs=xs, ys=ys, headings=headings, speeds=speeds,
            path=path, path_arc=np.interp(grid_t, ts, arc_raw)))
    if not vehicles:
        raise TraceError(f"{trace_path}: no vehicle lands on the slot grid")
    return Scenario(slot_s, n_slots, vehicles, buildings or BuildingMap())


def load_traces(trace_path: str, route_path: str | None = None,
                slot_s: float = 2e-3) -> list[TraceFrame]:
    """Trace file to per-slot frames; see load_scenario for the grid rules."""
    return load_scenario(trace_path, route_path, None, slot_s).frames()


def write_trace_csv(frames: list[TraceFrame], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(TRACE_HEADER + "\n")
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for frame in frames:
            for st in frame.states:
                writer.writerow([f"{frame.time_s:.6f}", st.vehicle_id, st.role,
                                 f"{st.footprint.center.x:.6f}",
                                 f"{st.footprint.center.y:.6f}",
                                 f"{st.footprint.heading:.9f}",
                                 f"{st.speed_mps:.6f}",
                                 f"{st.footprint.length:.3f}",
                                 f"{st.footprint.width:.3f}", st.quality])


def write_routes_csv(scenario: Scenario, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(ROUTES_HEADER + "\n")
        for v in scenario.vehicles:
            poly = ";".join(f"{p.x:.6f},{p.y:.6f}" for p in v.route.waypoints)
            fh.write(f"{v.vehicle_id},{v.src_dst[0]},{v.src_dst[1]},{poly}\n")


def write_buildings_csv(buildings: BuildingMap, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(BUILDINGS_HEADER + "\n")
        for poly in buildings.polygons:
            fh.write(";".join(f"{p.x:.6f},{p.y:.6f}" for p in poly) + "\n")


# ---------------------------------------------------------------------------
# synthetic junction

ARMS = ("W", "S", "E", "N")  # rotation order, 90 degrees counter-clockwise each

VEHICLE_CLASSES = (
    (4.5, 1.8, 0.70),   # car
    (8.0, 2.5, 0.15),   # delivery truck
    (12.0, 2.5, 0.15),  # bus
)

TURNS = (1, 2, 3)           # left, straight, right (in rotation order)
TURN_MIX = (0.2, 0.6, 0.2)  # most junction traffic continues straight


@dataclass(frozen=True)
class JunctionConfig:
    """Four-arm signalized junction with one inbound and one outbound lane per arm."""

    n_tx: int = 26
    n_rx: int = 21
    arm_m: float = 200.0
    exit_m: float = 120.0
    box_half_m: float = 10.0
    lane_offset_m: float = 2.45
    building_setback_m: float = 2.0
    building_size_m: float = 80.0
    median_halfwidth_m: float = 0.5
    median_setback_m: float = 5.0
    signal_period_s: float = 30.0
    speed_min_mps: float = 8.0
    speed_max_mps: float = 14.0
    min_gap_m: float = 3.5
    stop_offset_m: float = 1.0
    spawn_margin_m: float = 10.0
    duration_s: float = 30.0
    slot_s: float = 2e-3
    n_quality: int = 4

    def __post_init__(self) -> None:
        if self.n_tx < 1 or self.n_rx < 1:
            raise ValueError("need at least one transmitter and one receiver")
        if not 0.0 < self.speed_min_mps <= self.speed_max_mps:
            raise ValueError("speed range must be positive and ordered")
        if self.arm_m <= 2 * self.spawn_margin_m or self.box_half_m <= self.lane_offset_m:
            raise ValueError("junction geometry out of range")
        if self.median_halfwidth_m < 0 or self.median_setback_m < 0:
            raise ValueError("median dimensions must be non-negative")
        if self.median_halfwidth_m >= self.lane_offset_m:
            raise ValueError("median would overlap the lanes")
        if self.exit_m <= 0:
            raise ValueError("exit_m must be positive")
        if self.duration_s <= 0 or self.slot_s <= 0 or self.signal_period_s <= 0:
            raise ValueError("durations must be positive")


def _rotate(pts: list[Vec2], quarter_turns: int) -> list[Vec2]:
    out = pts
    for _ in range(quarter_turns % 4):
        out = [Vec2(-p.y, p.x) for p in out]
    return out


def _junction_route(cfg: JunctionConfig, arm_idx: int, turn: int) -> Route:
    """Route entering on arm `arm_idx`; turn 1=right, 2=straight, 3=left.

    Inbound legs span the full approach arm; outbound legs stop `exit_m`
    past the box, where vehicles leave the observed region.
    """
    big = cfg.box_half_m + cfg.arm_m
    out = cfg.box_half_m + cfg.exit_m
    off = cfg.lane_offset_m
    if turn == 2:
        base = [Vec2(-big, -off), Vec2(out, -off)]
    elif turn == 1:
        base = [Vec2(-big, -off), Vec2(-off, -off), Vec2(-off, -out)]
    elif turn == 3:
        base = [Vec2(-big, -off), Vec2(off, -off), Vec2(off, out)]
    else:
        raise ValueError("turn must be 1, 2 or 3")
    return Route(_rotate(base, arm_idx))


def junction_buildings(cfg: JunctionConfig) -> BuildingMap:
    """Corner blocks plus raised median strips dividing each arm's directions.

    The medians stop short of the box, so cross-box sight lines stay open
    while shallow along-road paths between opposing lanes are cut.
    """
    b = cfg.box_half_m + cfg.building_setback_m
    sz = cfg.building_size_m
    quads = []
    for sx, sy in ((1, 1), (-1, 1), (-1, -1), (1, -1)):
        xs = sorted((sx * b, sx * (b + sz)))
        ys = sorted((sy * b, sy * (b + sz)))
        quads.append([Vec2(xs[0], ys[0]), Vec2(xs[1], ys[0]),
                      Vec2(xs[1], ys[1]), Vec2(xs[0], ys[1])])
    hw = cfg.median_halfwidth_m
    if hw > 0:
        near = cfg.box_half_m + cfg.median_setback_m
        far = cfg.box_half_m + cfg.arm_m
        for base in ([Vec2(-far, -hw), Vec2(-near, -hw),
                      Vec2(-near, hw), Vec2(-far, hw)],):
            for quarter in range(4):
                quads.append(_rotate(base, quarter))
    return BuildingMap(quads)


def _ns_green(cfg: JunctionConfig, t: float) -> bool:
    return math.fmod(t, cfg.signal_period_s) < cfg.signal_period_s / 2.0


@dataclass
class _SynthVehicle:
    vid: str
    role: str
    arm: int
    turn: int
    length: float
    width: float
    speed: float
    quality: int
    route: Route
    arc: float
    start_arc: float
    exited: bool = False
    arcs: list[float] = field(default_factory=list)


def synth_junction_scenario(cfg: JunctionConfig, seed: int) -> Scenario:
    """Deterministic synthetic junction scenario for one seed.

    Vehicles spawn queued on the inbound approaches with randomized headways,
    drive at a per-vehicle constant speed, stop at the line on red (and behind
    a stopped leader), clear the box and leave along the exit arm. Spawn
    layouts that cannot fit the requested counts raise ValueError.
    """
    rng = np.random.default_rng(seed)
    n_total = cfg.n_tx + cfg.n_rx
    roles = [ROLE_TX] * cfg.n_tx + [ROLE_RX] * cfg.n_rx
    rng.shuffle(roles)

    vehicles: list[_SynthVehicle] = []
    for i in range(n_total):
        arm = int(rng.integers(0, 4))
        turn = int(rng.choice(TURNS, p=TURN_MIX))
        u = rng.random()
        acc = 0.0
        length, width = VEHICLE_CLASSES[0][:2]
        for lng, wid, prob in VEHICLE_CLASSES:
            acc += prob
            if u < acc:
                length, width = lng, wid
                break
        speed = float(rng.uniform(cfg.speed_min_mps, cfg.speed_max_mps))
        quality = int(rng.integers(1, cfg.n_quality + 1))
        route = _junction_route(cfg, arm, turn)
        vehicles.append(_SynthVehicle(
            vid=f"v{i:03d}", role=roles[i], arm=arm, turn=turn, length=length,
            width=width, speed=speed, quality=quality, route=route,
            arc=0.0, start_arc=0.0))

    # spread vehicles per arm along the approach with randomized headways, so
    # the run opens with flowing traffic and queues only form at red phases
    s_stop = cfg.arm_m - cfg.stop_offset_m  # arc of the stop line from spawn end
    for arm in range(4):
        group = [v for v in vehicles if v.arm == arm]
        if not group:
            continue
        room = cfg.arm_m - 2 * cfg.spawn_margin_m
        need = sum(v.length + cfg.min_gap_m for v in group)
        if need > room:
            raise ValueError(f"infeasible spawn density: arm {ARMS[arm]} needs "
                             f"{need:.0f} m of {room:.0f} m available")
        extras = rng.uniform(0.0, 1.0, size=len(group))
        slack = (room - need) * extras / extras.sum() if extras.sum() > 0 else extras
        arc = s_stop - cfg.spawn_margin_m
        for v, spare in zip(group, slack):
            arc -= spare + v.length / 2.0
            v.arc = v.start_arc = arc
            arc -= v.length / 2.0 + cfg.min_gap_m
        group.sort(key=lambda v: -v.arc)

    n_slots = int(round(cfg.duration_s / cfg.slot_s)) + 1
    free_region = cfg.arm_m + 2 * cfg.box_half_m
    by_arm = [[v for v in vehicles if v.arm == arm] for arm in range(4)]
    for arm_group in by_arm:
        arm_group.sort(key=lambda v: -v.arc)

    for k in range(n_slots):
        t = k * cfg.slot_s
        ns = _ns_green(cfg, t)
        for arm in range(4):
            green = ns if ARMS[arm] in ("N", "S") else not ns
            pred: _SynthVehicle | None = None
            lead_by_turn: dict[int, _SynthVehicle] = {}
            for v in by_arm[arm]:
                if v.exited:
                    continue
                v.arcs.append(v.arc)
                new_arc = v.arc + v.speed * cfg.slot_s
                crossed = v.arc > s_stop - v.length / 2.0
                if not green and not crossed:
                    new_arc = min(new_arc, s_stop - v.length / 2.0)
                # approach lane is shared: follow whoever is directly ahead
                # until that vehicle clears the junction box
                if pred is not None and pred.arc < free_region:
                    gap = (pred.length + v.length) / 2.0 + cfg.min_gap_m
                    new_arc = min(new_arc, pred.arc - gap)
                # no overtaking along the whole route: vehicles with the same
                # turn share an exit lane, so follow the nearest one ahead
                lead = lead_by_turn.get(v.turn)
                if lead is not None:
                    gap = (lead.length + v.length) / 2.0 + cfg.min_gap_m
                    new_arc = min(new_arc, lead.arc - gap)
                v.arc = max(v.arc, new_arc)
                if v.arc >= v.route.length():
                    v.exited = True
                pred = v
                lead_by_turn[v.turn] = v

    out = []
    for v in vehicles:
        arcs = np.array(v.arcs)
        pts = v.route.points_at(arcs)
        cum = v.route.cum_lengths
        seg_idx = np.clip(np.searchsorted(cum, arcs, side="right") - 1,
                          0, max(len(cum) - 2, 0))
        xs_r = v.route._xs
        ys_r = v.route._ys
        if len(xs_r) > 1:
            seg_head = np.arctan2(np.diff(ys_r), np.diff(xs_r))
            headings = seg_head[seg_idx]
        else:
            headings = np.zeros(len(arcs))
        speeds = np.empty(len(arcs))
        if len(arcs) > 1:
            speeds[:-1] = np.diff(arcs) / cfg.slot_s
            speeds[-1] = speeds[-2]
        else:
            speeds[:] = 0.0
        out.append(ScenarioVehicle(
            vehicle_id=v.vid, role=v.role, length=v.length, width=v.width,
            quality=v.quality, route=v.route,
            src_dst=(ARMS[v.arm], ARMS[(v.arm + v.turn) % 4]),
            first_slot=0, xs=pts[:, 0], ys=pts[:, 1], headings=headings,
            speeds=speeds, path=v.route, path_arc=arcs,
            path_start_arc=v.start_arc))
    return Scenario(cfg.slot_s, n_slots, out, junction_buildings(cfg))


def synth_junction(cfg: JunctionConfig, seed: int) -> tuple[list[TraceFrame], BuildingMap]:
    """Frames-and-buildings view of the synthetic junction scenario."""
    scenario = synth_junction_scenario(cfg, seed)
    return scenario.frames(), scenario.buildings
