"""Epoch/slot simulation loop: context factors, matching, transmission, queues."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from numba import njit

from . import channel, geometry, matching, queueing
from .channel import AntennaConfig, PathlossParams, RadioConfig
from .matching import Matching, PairFeatures, PolicyConfig, Quota
from .mobility import ROLE_RX, ROLE_TX, Scenario
from .queueing import DeliveryRecord, QueueConfig, QueueState

TWO_PI = 2.0 * math.pi


@njit(cache=True)
def _rect_hit_counts(axm, aym, bxm, bym, bodies_x, bodies_y, cos_h, sin_h,
                     present, half_len, half_wid, pair_of, body_of, n_pairs):
    """Accumulate per-slot blocker counts over candidate pair/body columns.

    Runs the same closed-set separating-axis test as the scalar footprint
    check, with early rejection per axis; counts[i, p] gains one for every
    candidate body whose rectangle meets pair p's segment in slot i. Compiled
    because dense scenes produce hundreds of thousands of cells per epoch.
    """
    m = axm.shape[0]
    counts = np.zeros((m, n_pairs))
    for j in range(pair_of.shape[0]):
        p = pair_of[j]
        b = body_of[j]
        hl = half_len[b]
        hw = half_wid[b]
        for i in range(m):
            if not present[i, b]:
                continue
            c = cos_h[i, b]
            s = sin_h[i, b]
            rax = axm[i, p] - bodies_x[i, b]
            ray = aym[i, p] - bodies_y[i, b]
            rbx = bxm[i, p] - bodies_x[i, b]
            rby = bym[i, p] - bodies_y[i, b]
            lax = rax * c + ray * s
            lay = ray * c - rax * s
            lbx = rbx * c + rby * s
            lby = rby * c - rbx * s
            if max(lax, lbx) < -hl or min(lax, lbx) > hl:
                continue
            if max(lay, lby) < -hw or min(lay, lby) > hw:
                continue
            dx = lbx - lax
            dy = lby - lay
            if abs(dy * lax - dx * lay) > abs(dy) * hl + abs(dx) * hw:
                continue
            pa = dx * lax + dy * lay
            pb = dx * lbx + dy * lby
            reach = abs(dx) * hl + abs(dy) * hw
            if max(pa, pb) < -reach or min(pa, pb) > reach:
                continue
            counts[i, p] += 1.0
    return counts


@dataclass(frozen=True)
class SimConfig:
    """Full experiment configuration; defaults reproduce the reference setup."""

    duration_s: float = 30.0
    slot_s: float = 2e-3
    slots_per_epoch: int = 50
    seed: int = 1

    phi_deg: float = 15.0
    psi_deg: float = 45.0
    sidelobe: float = 0.003
    pilot_s: float = 20e-6

    bandwidth_hz: float = 2.16e9
    noise_dbm_hz: float = -174.0
    tx_power_dbm: float = 15.0

    pl_exponents: tuple[float, ...] = (2.66, 3.01, 3.36)
    pl_intercepts_db: tuple[float, ...] = (68.6, 72.6, 76.6)
    atmospheric_db_per_km: float = 15.0
    building_penalty_db: float = 400.0

    packet_bits: float = 1e6
    arrival_rate_pps: float = 500.0
    buffer_packets: int = 1
    deadline_s: float = 2e-3

    quota_tx: int = 1
    quota_rx: int = 1
    policy_name: str = matching.CONTEXT_AWARE
    omega_d: float = 0.5
    omega_i: float = 0.25
    omega_e: float = 0.25
    alpha: float = 2.0
    proposer: str = "vtx"
    quality_side: str = "rx"

    radii_m: tuple[float, ...] = (5.0, 10.0, 15.0, 20.0)
    min_packets: tuple[int, ...] = (1, 2, 3, 4)

    ema_eta: float = 0.3
    cell_m: float = 0.5
    corridor_m: float = 5.0
    timeliness_step_m: float = 2.0
    horizon_m: float = 100.0
    past_window_m: float = 100.0

    alignment_per_epoch: bool = True
    idle_tx_interfere: bool = False
    count_overflow_drops: bool = True

    def __post_init__(self) -> None:
        if self.slots_per_epoch < 1:
            raise ValueError("an epoch needs at least one slot")
        if self.epochs() < 1:
            raise ValueError("duration must cover at least one epoch")
        if len(self.radii_m) != len(self.min_packets):
            raise ValueError("radii and per-quality packet thresholds must align")
        if any(b <= a for a, b in zip(self.radii_m, self.radii_m[1:])):
            raise ValueError("sensing radii must be strictly increasing")
        if any(m < 1 for m in self.min_packets) or \
           any(b < a for a, b in zip(self.min_packets, self.min_packets[1:])):
            raise ValueError("packet thresholds must be positive and non-decreasing")
        self.radio()
        self.antenna()
        self.pathloss_params()
        self.queue_config()
        self.quota()
        self.policy()
        if self.quality_side not in ("rx", "tx"):
            raise ValueError("quality_side must be 'rx' or 'tx'")
        if self.proposer not in ("vtx", "vrx"):
            raise ValueError("proposer must be 'vtx' or 'vrx'")
        for name in ("ema_eta", "cell_m", "corridor_m", "timeliness_step_m",
                     "horizon_m", "past_window_m"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def epochs(self) -> int:
        return int(round(self.duration_s / self.slot_s)) // self.slots_per_epoch

    def radio(self) -> RadioConfig:
        return RadioConfig(self.bandwidth_hz, self.noise_dbm_hz,
                           self.tx_power_dbm, self.slot_s)

    def antenna(self) -> AntennaConfig:
        phi = math.radians(self.phi_deg)
        psi = math.radians(self.psi_deg)
        return AntennaConfig(phi_tx=phi, phi_rx=phi, psi_tx=psi, psi_rx=psi,
                             sidelobe=self.sidelobe, pilot_s=self.pilot_s)

    def pathloss_params(self) -> PathlossParams:
        return PathlossParams(self.pl_exponents, self.pl_intercepts_db,
                              self.atmospheric_db_per_km, self.building_penalty_db)

    def queue_config(self) -> QueueConfig:
        return QueueConfig(self.packet_bits, self.arrival_rate_pps,
                           self.buffer_packets, self.deadline_s, self.slot_s)

    def quota(self) -> Quota:
        return Quota(self.quota_tx, self.quota_rx)

    def policy(self) -> PolicyConfig:
        if self.policy_name == matching.MIN_DIST:
            return PolicyConfig(self.policy_name, alpha=self.alpha)
        if self.policy_name == matching.DELAY_FAIR:
            return PolicyConfig(self.policy_name, 1.0, 0.0, 0.0, self.alpha)
        return PolicyConfig(self.policy_name, self.omega_d, self.omega_i,
                            self.omega_e, self.alpha)


@dataclass
class MetricsFrame:
    """Everything observable about one scheduling epoch."""

    epoch: int
    t_start: float
    policy: str
    matching: Matching
    links: list[tuple[str, str]]
    rx_ids: list[str]
    esi_bits: np.ndarray            # (slots, len(rx_ids))
    link_rates: np.ndarray          # (slots, len(links)) in bits/s
    records: list[DeliveryRecord]
    p_drop: dict[tuple[str, str], float]
    quality: dict[tuple[str, str], int]
    present_tx: int = 0
    present_rx: int = 0
    arrivals: dict[tuple[str, str], int] = field(default_factory=dict)
    buffered: dict[tuple[str, str], int] = field(default_factory=dict)


def esi(match: Matching, factors: dict[tuple[str, str], tuple[float, float, int]],
        rates: dict[tuple[str, str], float], radii: tuple[float, ...],
        slot_s: float) -> dict[str, float]:
    """Extended-sensing bits per receiver for one slot.

    factors maps each matched pair to (timeliness, extension, tx quality
    level); rates carry the pair's slot rate in bits/s. Unmatched receivers
    are absent from the result (their share is zero by definition).
    """
    out: dict[str, float] = {}
    r_top = radii[-1]
    for t, rxs in match.tx_to_rx.items():
        for r in rxs:
            timeliness, extension, q_tx = factors[(t, r)]
            if not 1 <= q_tx <= len(radii):
                raise ValueError(f"quality level {q_tx} outside 1..{len(radii)}")
            share = (radii[q_tx - 1] / r_top) ** 2
            out[r] = out.get(r, 0.0) + timeliness * extension * share * \
                rates[(t, r)] * slot_s
    return out


def achieved_quality(delivered: int, min_packets: tuple[int, ...]) -> int:
    """Largest quality level whose packet threshold the delivered count meets."""
    level = 0
    for q, need in enumerate(min_packets, start=1):
        if delivered >= need:
            level = q
    return level


def aggregate_cdf(samples, percentiles: tuple[int, ...] = (50, 80, 90)) -> dict | None:
    """Linear-interpolation percentile table, or None for no samples."""
    arr = np.asarray(list(samples), dtype=float)
    if arr.size == 0:
        return None
    out = {"count": int(arr.size)}
    for p in percentiles:
        out[f"p{p}"] = float(np.quantile(arr, p / 100.0))
    return out


def _wrap(a):
    return (a + math.pi) % TWO_PI - math.pi


class _Engine:
    """Mutable cross-epoch state and the batched per-epoch computation."""

    def __init__(self, scenario: Scenario, cfg: SimConfig):
        if abs(scenario.slot_s - cfg.slot_s) > 1e-12:
            raise ValueError("scenario and config slot durations differ")
        self.scn = scenario
        self.cfg = cfg
        self.radio = cfg.radio()
        self.ant = cfg.antenna()
        self.qcfg = cfg.queue_config()
        self.policy = cfg.policy()
        self.quota = cfg.quota()
        self.tau = channel.alignment_delay(self.ant)
        self.phi = self.ant.phi_tx
        self.g_main = (TWO_PI - (TWO_PI - self.phi) * cfg.sidelobe) / self.phi
        self.noise_mw = self.radio.noise_mw()
        self.p_mw = self.radio.tx_power_mw()
        self.estimator = matching.RateEstimator(cfg.ema_eta)
        self.queues: dict[tuple[str, str], tuple[QueueState, np.random.Generator]] = {}
        self.prev_links: list[tuple[str, str]] = []
        self.prev_mean_rates: dict[tuple[str, str], float] = {}
        self.vindex = {v.vehicle_id: i for i, v in enumerate(scenario.vehicles)}
        self._grids: dict[float, tuple] = {}
        self.bld_polys = scenario.buildings.polygons
        self.bld_boxes = scenario.buildings.bounding_boxes() if self.bld_polys else \
            np.zeros((0, 4))

    # -- per-epoch geometry helpers ------------------------------------------------

    def _pose_block(self, vehicles, s0: int, m: int):
        """Positions/headings over slots [s0, s0+m); absent slots padded and masked."""
        n = len(vehicles)
        xs = np.empty((m, n))
        ys = np.empty((m, n))
        hd = np.empty((m, n))
        present = np.zeros((m, n), dtype=bool)
        idx = np.arange(s0, s0 + m)
        for j, v in enumerate(vehicles):
            clip = np.clip(idx, v.first_slot, v.last_slot) - v.first_slot
            xs[:, j] = v.xs[clip]
            ys[:, j] = v.ys[clip]
            hd[:, j] = v.headings[clip]
            lo = max(s0, v.first_slot)
            hi = min(s0 + m, v.last_slot + 1)
            if lo < hi:
                present[lo - s0:hi - s0, j] = True
        return xs, ys, hd, present

    @staticmethod
    def _seg_point_dist2(ax, ay, bx, by, px, py):
        """Squared distance from points to segments, elementwise broadcast."""
        dx = bx - ax
        dy = by - ay
        len2 = np.maximum(dx * dx + dy * dy, 1e-12)
        qx = px - ax
        qy = py - ay
        t = np.clip((qx * dx + qy * dy) / len2, 0.0, 1.0)
        ex = qx - t * dx
        ey = qy - t * dy
        return ex * ex + ey * ey

    def _blocker_counts(self, axm, aym, bxm, bym, bodies_x, bodies_y, bodies_hd,
                        bodies_present, half_len, half_wid, skip_a, skip_b):
        """Per-slot blocker counts for P link segments against F vehicle bodies.

        axm.. are (m, P) segment endpoints; bodies_* are (m, F). A
        conservative whole-epoch distance screen discards body/segment
        combinations that cannot touch in any slot; the compiled exact test
        then runs on every surviving column across all slots. Traffic is
        dense enough that a finer per-slot screen rejects too little to pay
        for itself. A body within half its diagonal of the segment is never
        screened out, so the counts equal the brute-force ones.
        """
        m, n_pairs = axm.shape
        counts = np.zeros((m, n_pairs))
        n_bodies = bodies_x.shape[1]
        if n_bodies == 0:
            return counts
        half_diag = np.hypot(half_len, half_wid)

        # epoch screen on mid positions padded by everyone's motion radius
        a_mid_x = (axm.min(0) + axm.max(0)) / 2.0
        a_mid_y = (aym.min(0) + aym.max(0)) / 2.0
        b_mid_x = (bxm.min(0) + bxm.max(0)) / 2.0
        b_mid_y = (bym.min(0) + bym.max(0)) / 2.0
        seg_mot = np.maximum(
            np.hypot(axm.max(0) - axm.min(0), aym.max(0) - aym.min(0)),
            np.hypot(bxm.max(0) - bxm.min(0), bym.max(0) - bym.min(0))) / 2.0
        body_mot = np.hypot(bodies_x.max(0) - bodies_x.min(0),
                            bodies_y.max(0) - bodies_y.min(0)) / 2.0
        d2 = self._seg_point_dist2(
            a_mid_x[:, None], a_mid_y[:, None], b_mid_x[:, None], b_mid_y[:, None],
            (bodies_x.min(0) + bodies_x.max(0))[None, :] / 2.0,
            (bodies_y.min(0) + bodies_y.max(0))[None, :] / 2.0)
        reach = half_diag[None, :] + body_mot[None, :] + seg_mot[:, None] + 1e-6
        cand = d2 <= reach * reach
        cand[np.arange(n_pairs), skip_a] = False
        cand[np.arange(n_pairs), skip_b] = False
        pair_idx, body_idx = np.nonzero(cand)
        if len(pair_idx) == 0:
            return counts

        return _rect_hit_counts(
            np.ascontiguousarray(axm), np.ascontiguousarray(aym),
            np.ascontiguousarray(bxm), np.ascontiguousarray(bym),
            bodies_x, bodies_y, np.cos(bodies_hd), np.sin(bodies_hd),
            bodies_present, half_len, half_wid, pair_idx, body_idx, n_pairs)

    def _building_blocked(self, axm, aym, bxm, bym):
        """Per-slot building cut flags for (m, P) segments, bbox-screened."""
        m, n_pairs = axm.shape
        blocked = np.zeros((m, n_pairs), dtype=bool)
        if not self.bld_polys:
            return blocked
        seg_xlo = np.minimum(axm.min(0), bxm.min(0))
        seg_xhi = np.maximum(axm.max(0), bxm.max(0))
        seg_ylo = np.minimum(aym.min(0), bym.min(0))
        seg_yhi = np.maximum(aym.max(0), bym.max(0))
        for poly, box in zip(self.bld_polys, self.bld_boxes):
            cand = (seg_xlo <= box[2]) & (seg_xhi >= box[0]) & \
                   (seg_ylo <= box[3]) & (seg_yhi >= box[1])
            idx = np.nonzero(cand)[0]
            if len(idx) == 0:
                continue
            blocked[:, idx] |= geometry.segment_crosses_polygon(
                axm[:, idx], aym[:, idx], bxm[:, idx], bym[:, idx], poly)
        return blocked

    def _disk_grid(self, radius: float):
        """Cell-center offsets inside a sensing disk, cached per radius."""
        got = self._grids.get(radius)
        if got is None:
            n = int(math.ceil(radius / self.cfg.cell_m))
            offs = (np.arange(2 * n) - n + 0.5) * self.cfg.cell_m
            ox, oy = np.meshgrid(offs, offs, indexing="ij")
            inside = ox * ox + oy * oy <= radius * radius
            got = (ox[inside], oy[inside], int(np.count_nonzero(inside)))
            self._grids[radius] = got
        return got

    def _extension_matrix(self, txs, rxs, tx_x, tx_y, rx_x, rx_y):
        """Sensing extension per pair from one grid per transmitter.

        The grid cells a building swallows are removed once per transmitter;
        receivers whose disk cannot reach the transmitter's disk take the
        resulting fraction directly, the rest subtract their overlap cells.
        """
        cfg = self.cfg
        out = np.zeros((len(txs), len(rxs)))
        rx_r = np.array([cfg.radii_m[v.quality - 1] for v in rxs], dtype=float)
        for i, v in enumerate(txs):
            r_tx = cfg.radii_m[v.quality - 1]
            ox, oy, total = self._disk_grid(r_tx)
            if total == 0:
                continue
            gx = tx_x[i] + ox
            gy = tx_y[i] + oy
            keep = np.ones(len(gx), dtype=bool)
            for poly, box in zip(self.bld_polys, self.bld_boxes):
                if tx_x[i] + r_tx < box[0] or tx_x[i] - r_tx > box[2] or \
                   tx_y[i] + r_tx < box[1] or tx_y[i] - r_tx > box[3]:
                    continue
                keep &= ~geometry.points_in_polygon(gx, gy, poly)
            n_free = int(np.count_nonzero(keep))
            base = n_free / total
            dist = np.hypot(rx_x - tx_x[i], rx_y - tx_y[i])
            out[i] = base
            near = np.nonzero(dist <= r_tx + rx_r + 1e-9)[0]
            if len(near) == 0 or n_free == 0:
                continue
            fx = gx[keep]
            fy = gy[keep]
            d2 = (fx[:, None] - rx_x[near]) ** 2 + (fy[:, None] - rx_y[near]) ** 2
            overlap = np.count_nonzero(d2 <= rx_r[near] ** 2, axis=0)
            out[i, near] = (n_free - overlap) / total
        return out

    def _timeliness_matrix(self, txs, rxs, t0: float):
        """route_timeliness over all pairs: every transmitter's past segments
        are packed into one array and reduced per receiver in a single pass."""
        cfg = self.cfg
        out = np.zeros((len(txs), len(rxs)))
        rows, seg_x, seg_y, seg_dx, seg_dy, starts = [], [], [], [], [], []
        offset = 0
        for i, v in enumerate(txs):
            past = self.scn.past_trace(v.vehicle_id, t0, cfg.past_window_m)
            if len(past.waypoints) < 2 or past.length() <= 0.0:
                continue
            xs = np.array([p.x for p in past.waypoints])
            ys = np.array([p.y for p in past.waypoints])
            rows.append(i)
            starts.append(offset)
            seg_x.append(xs[:-1])
            seg_y.append(ys[:-1])
            seg_dx.append(np.diff(xs))
            seg_dy.append(np.diff(ys))
            offset += len(xs) - 1
        if not rows:
            return out
        sx = np.concatenate(seg_x)
        sy = np.concatenate(seg_y)
        dx = np.concatenate(seg_dx)
        dy = np.concatenate(seg_dy)
        len2 = dx * dx + dy * dy
        starts_arr = np.array(starts)
        corr2 = cfg.corridor_m ** 2
        for j, v in enumerate(rxs):
            fut = self.scn.future_route(v.vehicle_id, t0, cfg.horizon_m)
            horizon = min(fut.length(), cfg.horizon_m)
            if horizon <= 0.0:
                continue
            svals = np.arange(0.0, horizon + 1e-9, cfg.timeliness_step_m)
            pts = fut.points_at(svals)
            px = pts[:, 0][:, None] - sx[None, :]
            py = pts[:, 1][:, None] - sy[None, :]
            t = np.clip((px * dx + py * dy) / len2, 0.0, 1.0)
            d2 = (px - t * dx) ** 2 + (py - t * dy) ** 2
            dmin = np.minimum.reduceat(d2, starts_arr, axis=1)
            out[rows, j] = np.count_nonzero(dmin <= corr2, axis=0) / len(svals)
        return out

    # -- epoch body ---------------------------------------------------------------

    def run_epoch(self, epoch: int) -> MetricsFrame:
        cfg = self.cfg
        m_slots = cfg.slots_per_epoch
        s0 = epoch * m_slots
        t0 = s0 * cfg.slot_s

        txs = [v for v in self.scn.present_vehicles(s0) if v.role == ROLE_TX]
        rxs = [v for v in self.scn.present_vehicles(s0) if v.role == ROLE_RX]
        tx_ids = [v.vehicle_id for v in txs]
        rx_ids = [v.vehicle_id for v in rxs]
        n_tx = len(txs)
        n_rx = len(rxs)

        observed = {pair: self.prev_mean_rates.get(pair, 0.0)
                    for pair in self.prev_links}

        if n_tx == 0 or n_rx == 0:
            self.estimator.update(observed, {})
            self._retire_queues(set())
            self.prev_links = []
            self.prev_mean_rates = {}
            return MetricsFrame(epoch, t0, self.policy.name, Matching(), [], [],
                                np.zeros((m_slots, 0)), np.zeros((m_slots, 0)),
                                [], {}, {}, n_tx, n_rx)

        everyone = txs + rxs
        x0 = np.array([float(v.xs[s0 - v.first_slot]) for v in everyone])
        y0 = np.array([float(v.ys[s0 - v.first_slot]) for v in everyone])
        hd0 = np.array([float(v.headings[s0 - v.first_slot]) for v in everyone])
        tx_x, tx_y = x0[:n_tx], y0[:n_tx]
        rx_x, rx_y = x0[n_tx:], y0[n_tx:]

        dist0 = np.hypot(rx_x[None, :] - tx_x[:, None], rx_y[None, :] - tx_y[:, None])
        ax0 = np.repeat(tx_x, n_rx)
        ay0 = np.repeat(tx_y, n_rx)
        bx0 = np.tile(rx_x, n_tx)
        by0 = np.tile(rx_y, n_tx)
        blocked0 = self._building_blocked(ax0[None, :], ay0[None, :],
                                          bx0[None, :], by0[None, :])
        blocked0 = blocked0[0].reshape(n_tx, n_rx)
        half_len = np.array([v.length / 2.0 for v in everyone])
        half_wid = np.array([v.width / 2.0 for v in everyone])
        skip_a = np.repeat(np.arange(n_tx), n_rx)
        skip_b = np.tile(np.arange(n_tx, n_tx + n_rx), n_tx)
        blockers0 = self._blocker_counts(
            ax0[None, :], ay0[None, :], bx0[None, :], by0[None, :],
            x0[None, :], y0[None, :], hd0[None, :],
            np.ones((1, len(everyone)), dtype=bool),
            half_len, half_wid, skip_a, skip_b)[0].reshape(n_tx, n_rx)

        # optimistic cold-start rates: aligned beams, no interference
        exp_idx = np.minimum(blockers0.astype(int), len(cfg.pl_exponents) - 1)
        safe_d = np.maximum(dist0, 1e-3)
        pl0 = (10.0 * np.take(cfg.pl_exponents, exp_idx) * np.log10(safe_d)
               + np.take(cfg.pl_intercepts_db, exp_idx)
               + cfg.atmospheric_db_per_km * safe_d / 1000.0
               + np.where(blocked0, cfg.building_penalty_db, 0.0))
        snr0 = self.p_mw * self.g_main ** 2 * 10.0 ** (-pl0 / 10.0) / self.noise_mw
        frac = max(0.0, 1.0 - self.tau / cfg.slot_s)
        rates0 = frac * cfg.bandwidth_hz * np.log2(1.0 + snr0)

        ext = self._extension_matrix(txs, rxs, tx_x, tx_y, rx_x, rx_y)
        timely = self._timeliness_matrix(txs, rxs, t0)

        snapshot = {}
        for i, t in enumerate(tx_ids):
            for j, r in enumerate(rx_ids):
                snapshot[(t, r)] = float(rates0[i, j])
        estimates = self.estimator.update(observed, snapshot)
        open_est = {}
        for i, t in enumerate(tx_ids):
            for j, r in enumerate(rx_ids):
                if not blocked0[i, j]:
                    open_est[(t, r)] = estimates[(t, r)]
        r_tx_norm = matching.normalize_rates(open_est, by_tx=True)
        r_rx_norm = matching.normalize_rates(open_est, by_tx=False)

        features = {}
        for i, t in enumerate(tx_ids):
            for j, r in enumerate(rx_ids):
                if dist0[i, j] <= 0.0:
                    continue  # co-located endpoints cannot form a link
                pair = (t, r)
                features[pair] = PairFeatures(
                    distance_m=float(dist0[i, j]),
                    r_tx_norm=r_tx_norm.get(pair, 0.0),
                    r_rx_norm=r_rx_norm.get(pair, 0.0),
                    timeliness=float(timely[i, j]),
                    extension=float(ext[i, j]),
                    building_blocked=bool(blocked0[i, j]))
        qualities = {v.vehicle_id: v.quality for v in everyone}
        prefs = matching.build_preferences(tx_ids, rx_ids, features, qualities,
                                           cfg.radii_m, self.policy, cfg.quality_side)
        match = matching.deferred_acceptance(prefs, self.quota, cfg.proposer)
        links = match.pairs()
        self._retire_queues(set(links))
        for pair in links:
            if pair not in self.queues:
                ss = np.random.SeedSequence((cfg.seed, 2718, self.vindex[pair[0]],
                                             self.vindex[pair[1]], epoch))
                self.queues[pair] = (QueueState(), np.random.default_rng(ss))

        return self._transmit(epoch, s0, match, links, txs, rxs, tx_ids, rx_ids,
                              x0, y0, timely, ext, qualities)

    def _retire_queues(self, keep: set) -> None:
        for pair in [p for p in self.queues if p not in keep]:
            del self.queues[pair]  # re-matching discards stale contents

    def _transmit(self, epoch, s0, match, links, txs, rxs, tx_ids, rx_ids,
                  x0, y0, timely, ext, qualities) -> MetricsFrame:
        cfg = self.cfg
        m_slots = cfg.slots_per_epoch
        n_tx = len(tx_ids)
        tx_col = {t: i for i, t in enumerate(tx_ids)}
        rx_col = {r: j for j, r in enumerate(rx_ids)}

        matched_tx = sorted({t for t, _ in links})
        active_tx = list(tx_ids) if cfg.idle_tx_interfere else matched_tx
        active_rx = sorted({r for _, r in links})
        a_of = {t: i for i, t in enumerate(active_tx)}
        r_of = {r: j for j, r in enumerate(active_rx)}
        n_a = len(active_tx)
        n_r = len(active_rx)

        rates_arr = np.zeros((m_slots, len(links)))
        esi_arr = np.zeros((m_slots, n_r))
        records: list[DeliveryRecord] = []
        p_drop: dict[tuple[str, str], float] = {}
        quality_lvl: dict[tuple[str, str], int] = {}
        arrivals_ct: dict[tuple[str, str], int] = {}
        buffered_ct: dict[tuple[str, str], int] = {}

        if links:
            tx_vehicles = [txs[tx_col[t]] for t in active_tx]
            rx_vehicles = [rxs[rx_col[r]] for r in active_rx]
            axs, ays, ahd, apres = self._pose_block(tx_vehicles, s0, m_slots)
            bxs, bys, _, bpres = self._pose_block(rx_vehicles, s0, m_slots)
            allv = self.scn.present_vehicles(s0)
            fxs, fys, fhd, fpres = self._pose_block(allv, s0, m_slots)
            f_half_len = np.array([v.length / 2.0 for v in allv])
            f_half_wid = np.array([v.width / 2.0 for v in allv])
            f_index = {v.vehicle_id: i for i, v in enumerate(allv)}

            # beams fixed at epoch start, pointing at the partner of the slot
            partners = {t: sorted(r for tt, r in links if tt == t) for t in active_tx}
            bs_tx = np.zeros((m_slots, n_a))
            serves = np.full((m_slots, n_a), -1, dtype=int)
            for i, t in enumerate(active_tx):
                plist = partners.get(t, [])
                if not plist:
                    bs_tx[:, i] = ahd[:, i]  # idle interferer radiates ahead
                    continue
                order = np.arange(m_slots) % len(plist)
                serves[:, i] = order
                gi = tx_col[t]
                for k, r in enumerate(plist):
                    gj = n_tx + rx_col[r]
                    ang0 = math.atan2(y0[gj] - y0[gi], x0[gj] - x0[gi])
                    bs_tx[order == k, i] = ang0
            bs_rx_link = np.zeros(len(links))
            for li, (t, r) in enumerate(links):
                gi = tx_col[t]
                gj = n_tx + rx_col[r]
                bs_rx_link[li] = math.atan2(y0[gi] - y0[gj], x0[gi] - x0[gj])

            # pairwise geometry over the epoch: (slots, active tx, active rx)
            dxm = bxs[:, None, :] - axs[:, :, None]
            dym = bys[:, None, :] - ays[:, :, None]
            dist = np.maximum(np.hypot(dxm, dym), 1e-3)
            ang = np.arctan2(dym, dxm)

            flat_a = np.repeat(np.arange(n_a), n_r)
            flat_r = np.tile(np.arange(n_r), n_a)
            skip_a = np.array([f_index[active_tx[i]] for i in flat_a])
            skip_b = np.array([f_index[active_rx[j]] for j in flat_r])
            blockers = self._blocker_counts(
                axs[:, flat_a], ays[:, flat_a], bxs[:, flat_r], bys[:, flat_r],
                fxs, fys, fhd, fpres, f_half_len, f_half_wid, skip_a, skip_b)
            blocked = self._building_blocked(
                axs[:, flat_a], ays[:, flat_a], bxs[:, flat_r], bys[:, flat_r])
            blockers = blockers.reshape(m_slots, n_a, n_r)
            blocked = blocked.reshape(m_slots, n_a, n_r)

            exp_idx = np.minimum(blockers.astype(int), len(cfg.pl_exponents) - 1)
            pl = (10.0 * np.take(cfg.pl_exponents, exp_idx) * np.log10(dist)
                  + np.take(cfg.pl_intercepts_db, exp_idx)
                  + cfg.atmospheric_db_per_km * dist / 1000.0
                  + np.where(blocked, cfg.building_penalty_db, 0.0))
            g_c = 10.0 ** (-pl / 10.0)

            theta_tx = _wrap(ang - bs_tx[:, :, None])
            g_tx = np.where(np.abs(theta_tx) <= self.phi / 2.0, self.g_main,
                            cfg.sidelobe)
            power = self.p_mw * g_tx * g_c * apres[:, :, None]

            cap_bits = np.zeros((m_slots, len(links)))
            for li, (t, r) in enumerate(links):
                ai = a_of[t]
                rj = r_of[r]
                theta_rx = _wrap(ang[:, :, rj] + math.pi - bs_rx_link[li])
                g_rx = np.where(np.abs(theta_rx) <= self.phi / 2.0, self.g_main,
                                cfg.sidelobe)
                pw = power[:, :, rj] * g_rx
                sig = pw[:, ai].copy()
                interf = pw.sum(axis=1) - sig
                served = serves[:, ai] == partners[t].index(r)
                alive = apres[:, ai] & bpres[:, rj] & served
                gamma = np.where(alive, sig / (interf + self.noise_mw), 0.0)
                spectral = cfg.bandwidth_hz * np.log2(1.0 + gamma)

                if cfg.alignment_per_epoch:
                    # burn the beam-search time once, over the first served slots
                    order = np.cumsum(served) - 1
                    left = np.clip(self.tau - order * cfg.slot_s, 0.0, cfg.slot_s)
                    usable_s = np.where(served, cfg.slot_s - left, 0.0)
                else:
                    usable_s = np.where(served,
                                        max(0.0, cfg.slot_s - self.tau), 0.0)
                cap_bits[:, li] = spectral * usable_s

            rates_arr = cap_bits / cfg.slot_s

            # extended sensing information credited per receiver and slot
            for li, (t, r) in enumerate(links):
                i = tx_col[t]
                j = rx_col[r]
                share = (cfg.radii_m[qualities[t] - 1] / cfg.radii_m[-1]) ** 2
                esi_arr[:, r_of[r]] += timely[i, j] * ext[i, j] * share * \
                    cap_bits[:, li]

            # queue service
            for li, pair in enumerate(links):
                q, rng = self.queues[pair]
                arr_counts = rng.poisson(cfg.arrival_rate_pps * cfg.slot_s,
                                         size=m_slots)
                link_recs: list[DeliveryRecord] = []
                for m in range(m_slots):
                    arr = int(arr_counts[m])
                    if arr == 0 and not q.packets:
                        continue  # advance would be a no-op
                    now = (s0 + m + 1) * cfg.slot_s
                    recs = queueing.advance(q, float(cap_bits[m, li]), now,
                                            arr, self.qcfg)
                    link_recs.extend(recs)
                for rec in link_recs:
                    rec.tx_id, rec.rx_id = pair
                    rec.epoch = epoch
                records.extend(link_recs)
                p_drop[pair] = queueing.drop_probability(
                    link_recs, cfg.count_overflow_drops)
                delivered = sum(1 for rec in link_recs
                                if rec.outcome == queueing.DELIVERED)
                quality_lvl[pair] = achieved_quality(delivered, cfg.min_packets)
                arrivals_ct[pair] = int(arr_counts.sum())
                buffered_ct[pair] = len(q)

        self.prev_links = links
        self.prev_mean_rates = {pair: float(rates_arr[:, li].mean())
                                for li, pair in enumerate(links)}
        return MetricsFrame(epoch, s0 * cfg.slot_s, self.policy.name, match,
                            links, active_rx, esi_arr, rates_arr, records,
                            p_drop, quality_lvl, len(tx_ids), len(rx_ids),
                            arrivals_ct, buffered_ct)


def run(scenario: Scenario, cfg: SimConfig) -> Iterator[MetricsFrame]:
    """Simulate epoch by epoch, yielding one MetricsFrame per epoch.

    The epoch count is the configured duration capped by the scenario length.
    Identical scenario, config and seed give an identical frame stream.
    """
    engine = _Engine(scenario, cfg)
    n_epochs = min(cfg.epochs(), scenario.n_slots // cfg.slots_per_epoch)
    if n_epochs < 1:
        raise ValueError("scenario too short for a single epoch")
    for epoch in range(n_epochs):
        yield engine.run_epoch(epoch)


def simulate(scenario: Scenario, cfg: SimConfig) -> list[MetricsFrame]:
    """Run to completion and return all epoch frames."""
    return list(run(scenario, cfg))
