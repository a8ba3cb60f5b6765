"""Planar geometry for the road scene: footprints, routes, blockage, disk coverage."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

EPS = 1e-9


class Vec2(NamedTuple):
    x: float
    y: float


def _cross(o: Vec2, a: Vec2, b: Vec2) -> float:
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)


def _within_box(a: Vec2, b: Vec2, p: Vec2) -> bool:
    return (min(a.x, b.x) - EPS <= p.x <= max(a.x, b.x) + EPS
            and min(a.y, b.y) - EPS <= p.y <= max(a.y, b.y) + EPS)


def segments_intersect(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool:
    """True iff the closed segments a-b and c-d share at least one point."""
    d1 = _cross(c, d, a)
    d2 = _cross(c, d, b)
    d3 = _cross(a, b, c)
    d4 = _cross(a, b, d)
    if ((d1 > EPS and d2 < -EPS) or (d1 < -EPS and d2 > EPS)) and \
       ((d3 > EPS and d4 < -EPS) or (d3 < -EPS and d4 > EPS)):
        return True
    if abs(d1) <= EPS and _within_box(c, d, a):
        return True
    if abs(d2) <= EPS and _within_box(c, d, b):
        return True
    if abs(d3) <= EPS and _within_box(a, b, c):
        return True
    if abs(d4) <= EPS and _within_box(a, b, d):
        return True
    return False


def point_in_polygon(p: Vec2, polygon: list[Vec2]) -> bool:
    """Even-odd ray casting. Points exactly on the boundary may land on either side."""
    inside = False
    n = len(polygon)
    for i in range(n):
        q1 = polygon[i]
        q2 = polygon[(i + 1) % n]
        if (q1.y > p.y) != (q2.y > p.y):
            x_int = q1.x + (p.y - q1.y) * (q2.x - q1.x) / (q2.y - q1.y)
            if p.x < x_int:
                inside = not inside
    return inside


def points_in_polygon(xs: np.ndarray, ys: np.ndarray, polygon: list[Vec2]) -> np.ndarray:
    """Vectorized even-odd test for arrays of points."""
    inside = np.zeros(np.broadcast(xs, ys).shape, dtype=bool)
    n = len(polygon)
    for i in range(n):
        x1, y1 = polygon[i]
        x2, y2 = polygon[(i + 1) % n]
        crosses = (y1 > ys) != (y2 > ys)
        if y1 == y2:
            continue
        x_int = x1 + (ys - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (xs < x_int)
    return inside


@dataclass
class Footprint:
    """Oriented rectangle occupied by a vehicle body."""

    center: Vec2
    heading: float
    length: float
    width: float

    def __post_init__(self) -> None:
        if not (self.length > 0 and self.width > 0):
            raise ValueError("footprint must have positive length and width")

    def corners(self) -> list[Vec2]:
        c = math.cos(self.heading)
        s = math.sin(self.heading)
        hl = self.length / 2.0
        hw = self.width / 2.0
        out = []
        for dx, dy in ((1, 1), (1, -1), (-1, -1), (-1, 1)):
            out.append(Vec2(self.center.x + c * dx * hl - s * dy * hw,
                            self.center.y + s * dx * hl + c * dy * hw))
        return out


@dataclass
class BuildingMap:
    """Collection of simple (non self-intersecting) building polygons."""

    polygons: list[list[Vec2]] = field(default_factory=list)

    def __post_init__(self) -> None:
        for poly in self.polygons:
            if len(poly) < 3:
                raise ValueError("building polygon needs at least 3 vertices")
            _check_simple(poly)

    def bounding_boxes(self) -> np.ndarray:
        # one row per polygon: (xmin, ymin, xmax, ymax)
        out = np.empty((len(self.polygons), 4))
        for i, poly in enumerate(self.polygons):
            xs = [p.x for p in poly]
            ys = [p.y for p in poly]
            out[i] = (min(xs), min(ys), max(xs), max(ys))
        return out


def _check_simple(poly: list[Vec2]) -> None:
    n = len(poly)
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        if a == b:
            raise ValueError("building polygon has a zero-length edge")
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            c, d = poly[j], poly[(j + 1) % n]
            if segments_intersect(a, b, c, d):
                raise ValueError("building polygon is self-intersecting")


def load_buildings(path: str) -> BuildingMap:
    """Read a '#buildings v1' file, one polygon per line as x1,y1;x2,y2;..."""
    polygons = []
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline().strip()
        if first != "#buildings v1":
            raise ValueError(f"{path}:1: expected '#buildings v1' header, got {first!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                pts = [Vec2(*map(float, pair.split(","))) for pair in line.split(";")]
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad polygon entry: {exc}") from None
            polygons.append(pts)
    return BuildingMap(polygons)


class Route:
    """Waypoint polyline with cumulative arc-length parametrization.

    Consecutive duplicate waypoints are collapsed so arc-lengths are strictly
    increasing, and interior points lying exactly on the straight run between
    their neighbours are dropped (the polyline, arc lengths and all queries
    are unchanged; per-timestep traces shrink to their corner points). A
    single surviving waypoint is allowed and has length zero.
    """

    def __init__(self, waypoints: list[Vec2]):
        if not waypoints:
            raise ValueError("route needs at least one waypoint")
        pts = [Vec2(float(waypoints[0].x), float(waypoints[0].y))]
        for p in waypoints[1:]:
            q = Vec2(float(p.x), float(p.y))
            if math.hypot(q.x - pts[-1].x, q.y - pts[-1].y) > 0.0:
                pts.append(q)
        if len(pts) > 2:
            thin = [pts[0]]
            for i in range(1, len(pts) - 1):
                a, b, c = thin[-1], pts[i], pts[i + 1]
                acx, acy = c.x - a.x, c.y - a.y
                abx, aby = b.x - a.x, b.y - a.y
                run = math.hypot(acx, acy)
                perp = abs(abx * acy - aby * acx) / run if run > 0.0 else 0.0
                ahead = abx * acx + aby * acy
                if perp <= 1e-9 and ahead >= 0.0 and \
                        abx * abx + aby * aby <= run * run:
                    continue
                thin.append(b)
            thin.append(pts[-1])
            pts = thin
        self.waypoints = pts
        self._xs = np.array([p.x for p in pts])
        self._ys = np.array([p.y for p in pts])
        seg = np.hypot(np.diff(self._xs), np.diff(self._ys))
        self._cum = np.concatenate(([0.0], np.cumsum(seg)))

    @property
    def cum_lengths(self) -> np.ndarray:
        return self._cum

    def length(self) -> float:
        return float(self._cum[-1])

    def point_at(self, s: float) -> Vec2:
        s = min(max(s, 0.0), self.length())
        return Vec2(float(np.interp(s, self._cum, self._xs)),
                    float(np.interp(s, self._cum, self._ys)))

    def points_at(self, svals: np.ndarray) -> np.ndarray:
        svals = np.clip(svals, 0.0, self.length())
        return np.stack([np.interp(svals, self._cum, self._xs),
                         np.interp(svals, self._cum, self._ys)], axis=-1)

    def heading_at(self, s: float) -> float:
        """Direction of travel at arc position s (constant per segment)."""
        if len(self.waypoints) < 2:
            return 0.0
        s = min(max(s, 0.0), self.length())
        i = int(np.searchsorted(self._cum, s, side="right")) - 1
        i = min(max(i, 0), len(self.waypoints) - 2)
        return math.atan2(self._ys[i + 1] - self._ys[i], self._xs[i + 1] - self._xs[i])

    def sub_route(self, s0: float, s1: float) -> "Route":
        """Slice between arc positions s0 <= s1, endpoints interpolated."""
        length = self.length()
        s0 = min(max(s0, 0.0), length)
        s1 = min(max(s1, 0.0), length)
        if s1 < s0:
            raise ValueError("sub_route needs s0 <= s1")
        pts = [self.point_at(s0)]
        inner = (self._cum > s0) & (self._cum < s1)
        for idx in np.nonzero(inner)[0]:
            pts.append(self.waypoints[int(idx)])
        pts.append(self.point_at(s1))
        return Route(pts)

    def __repr__(self) -> str:
        return f"Route({len(self.waypoints)} pts, {self.length():.1f} m)"


def segment_blocked_by_building(a: Vec2, b: Vec2, buildings: BuildingMap) -> bool:
    """True iff the open segment (a, b) meets any building interior or boundary.

    The endpoints themselves are excluded by shrinking the segment by a 1e-9
    relative margin, so a vehicle standing exactly on a wall does not block its
    own links.
    """
    if a == b:
        return False
    shrink = 1e-9
    a2 = Vec2(a.x + (b.x - a.x) * shrink, a.y + (b.y - a.y) * shrink)
    b2 = Vec2(b.x - (b.x - a.x) * shrink, b.y - (b.y - a.y) * shrink)
    mid = Vec2((a.x + b.x) / 2.0, (a.y + b.y) / 2.0)
    for poly in buildings.polygons:
        n = len(poly)
        for i in range(n):
            if segments_intersect(a2, b2, poly[i], poly[(i + 1) % n]):
                return True
        if point_in_polygon(mid, poly):
            return True
    return False


def _segment_hits_rect(a: Vec2, b: Vec2, fp: Footprint) -> bool:
    # separating-axis test in the rectangle's local frame; the four candidate
    # axes are the two rectangle normals, the segment normal and the segment
    # direction (closed sets: touching counts as a hit)
    c = math.cos(fp.heading)
    s = math.sin(fp.heading)
    ax = (a.x - fp.center.x) * c + (a.y - fp.center.y) * s
    ay = -(a.x - fp.center.x) * s + (a.y - fp.center.y) * c
    bx = (b.x - fp.center.x) * c + (b.y - fp.center.y) * s
    by = -(b.x - fp.center.x) * s + (b.y - fp.center.y) * c
    hx = fp.length / 2.0
    hy = fp.width / 2.0
    if max(ax, bx) < -hx or min(ax, bx) > hx:
        return False
    if max(ay, by) < -hy or min(ay, by) > hy:
        return False
    dx = bx - ax
    dy = by - ay
    if abs(dy * ax - dx * ay) > abs(dy) * hx + abs(dx) * hy:
        return False
    pa = dx * ax + dy * ay
    pb = dx * bx + dy * by
    reach = abs(dx) * hx + abs(dy) * hy
    if max(pa, pb) < -reach or min(pa, pb) > reach:
        return False
    return True


def count_blockers(a: Vec2, b: Vec2, footprints: list[Footprint]) -> int:
    """Number of footprints whose rectangle meets the closed segment a-b."""
    return sum(1 for fp in footprints if _segment_hits_rect(a, b, fp))


def segment_rect_hits(ax, ay, bx, by, cx, cy, heading, half_len, half_wid):
    """Vectorized segment/oriented-rectangle intersection (separating axes).

    All arguments broadcast together; returns a boolean array with the same
    closed-set semantics as the scalar test (touching counts). Plain-numpy
    reference for the simulator's compiled blocker kernel; also handy for
    bulk geometry queries.
    """
    c = np.cos(heading)
    s = np.sin(heading)
    rax = ax - cx
    ray = ay - cy
    rbx = bx - cx
    rby = by - cy
    lax = rax * c + ray * s
    lay = ray * c - rax * s
    lbx = rbx * c + rby * s
    lby = rby * c - rbx * s
    hit = (np.maximum(lax, lbx) >= -half_len) & (np.minimum(lax, lbx) <= half_len)
    hit &= (np.maximum(lay, lby) >= -half_wid) & (np.minimum(lay, lby) <= half_wid)
    dx = lbx - lax
    dy = lby - lay
    hit &= np.abs(dy * lax - dx * lay) <= np.abs(dy) * half_len + np.abs(dx) * half_wid
    pa = dx * lax + dy * lay
    pb = dx * lbx + dy * lby
    reach = np.abs(dx) * half_len + np.abs(dy) * half_wid
    hit &= (np.maximum(pa, pb) >= -reach) & (np.minimum(pa, pb) <= reach)
    return hit


def segment_crosses_polygon(ax, ay, bx, by, polygon: list[Vec2]) -> np.ndarray:
    """Vectorized proper-crossing test of segments a-b against one polygon.

    Detects edge crossings plus the fully-contained case via the midpoint;
    grazing contacts of measure zero are not guaranteed. Endpoint padding is
    the caller's concern.
    """
    ax, ay, bx, by = np.broadcast_arrays(ax, ay, bx, by)
    hit = np.zeros(ax.shape, dtype=bool)
    n = len(polygon)
    for i in range(n):
        c = polygon[i]
        d = polygon[(i + 1) % n]
        ex = d.x - c.x
        ey = d.y - c.y
        d1 = ex * (ay - c.y) - ey * (ax - c.x)
        d2 = ex * (by - c.y) - ey * (bx - c.x)
        sx = bx - ax
        sy = by - ay
        d3 = sx * (c.y - ay) - sy * (c.x - ax)
        d4 = sx * (d.y - ay) - sy * (d.x - ax)
        hit |= ((d1 > 0) != (d2 > 0)) & ((d3 > 0) != (d4 > 0))
    mx = (ax + bx) / 2.0
    my = (ay + by) / 2.0
    hit |= points_in_polygon(mx, my, polygon)
    return hit


def sensing_extension(tx_center: Vec2, r_tx: float, rx_center: Vec2, r_rx: float,
                      buildings: BuildingMap, cell: float = 0.5) -> float:
    """Fraction of the tx sensing disk not already covered by the rx disk or buildings.

    Both the kept area and the full disk area are counted on the same square
    grid (a cell belongs to a region iff its center does), so the fraction is
    exactly 1.0 for disjoint disks and exactly 0.0 for a fully covered disk.
    """
    if r_tx <= 0 or r_rx <= 0:
        raise ValueError("sensing radii must be positive")
    if cell <= 0:
        raise ValueError("grid cell must be positive")
    n = int(math.ceil(r_tx / cell))
    offs = (np.arange(2 * n) - n + 0.5) * cell
    ox, oy = np.meshgrid(offs, offs, indexing="ij")
    in_disk = ox * ox + oy * oy <= r_tx * r_tx
    total = int(np.count_nonzero(in_disk))
    if total == 0:
        return 0.0
    gx = tx_center.x + ox
    gy = tx_center.y + oy
    keep = in_disk & ((gx - rx_center.x) ** 2 + (gy - rx_center.y) ** 2 > r_rx * r_rx)
    for poly in buildings.polygons:
        if not keep.any():
            break
        keep &= ~points_in_polygon(gx, gy, poly)
    frac = np.count_nonzero(keep) / total
    return float(min(max(frac, 0.0), 1.0))


def route_timeliness(tx_past: Route, rx_future: Route, corridor: float = 5.0,
                     step: float = 2.0, h_max: float = 100.0) -> float:
    """Share of the receiver's upcoming route already covered by the transmitter's trail.

    The rx route is sampled every `step` meters up to min(route length, h_max)
    and a sample counts when it lies within `corridor` meters of the tx_past
    polyline. Degenerate inputs (a point trail or a point route) carry no
    directional information and score 0.
    """
    if corridor <= 0 or step <= 0:
        raise ValueError("corridor and step must be positive")
    if len(tx_past.waypoints) < 2 or tx_past.length() <= 0.0:
        return 0.0
    horizon = min(rx_future.length(), h_max)
    if horizon <= 0.0:
        return 0.0
    svals = np.arange(0.0, horizon + 1e-9, step)
    samples = rx_future.points_at(svals)
    ax = np.array([p.x for p in tx_past.waypoints])
    ay = np.array([p.y for p in tx_past.waypoints])
    segx = ax[:-1]
    segy = ay[:-1]
    dx = np.diff(ax)
    dy = np.diff(ay)
    seg_len2 = dx * dx + dy * dy
    px = samples[:, 0][:, None] - segx[None, :]
    py = samples[:, 1][:, None] - segy[None, :]
    t = np.clip((px * dx[None, :] + py * dy[None, :]) / seg_len2[None, :], 0.0, 1.0)
    ex = px - t * dx[None, :]
    ey = py - t * dy[None, :]
    d2 = (ex * ex + ey * ey).min(axis=1)
    return float(np.count_nonzero(d2 <= corridor * corridor) / len(svals))
