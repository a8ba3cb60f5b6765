"""Independent reference implementations used to cross-check the package.

Everything here is written straight from the definitions with different data
structures and control flow than the production code, so agreement between
the two routes is meaningful evidence rather than a tautology.
"""

from __future__ import annotations

import itertools
import math


# ---------------------------------------------------------------------------
# queueing: slot-by-slot FIFO buffer with deadline and overflow accounting


def queue_reference(slots, packet_bits, buffer_packets, deadline_s, slot_s):
    """Replay a whole slot sequence and return (records, leftover buffer).

    `slots` is a list of (served_bits, arrival_count) pairs, slot k covering
    the interval (k*slot_s, (k+1)*slot_s]. Records are (outcome, delay)
    tuples in emission order: completions first, then boundary expiries,
    then overflow, all FIFO within a slot. Arrivals land at the slot end.
    """
    buf: list[list[float]] = []  # [arrival_time, bits_left]
    records: list[tuple[str, float | None]] = []
    for k, (served, n_arr) in enumerate(slots):
        t1 = (k + 1) * slot_s
        t0 = t1 - slot_s
        cap = float(served)
        done_bits = 0.0
        while buf and cap > 0.0:
            at, bits = buf[0]
            if bits > cap:
                buf[0][1] = bits - cap
                cap = 0.0
                continue
            cap -= bits
            done_bits += bits
            finish = t0 + slot_s * (done_bits / served)
            buf.pop(0)
            if finish - at <= deadline_s:
                records.append(("delivered", finish - at))
            else:
                records.append(("dropped_deadline", None))
        kept = []
        for at, bits in buf:
            if t1 - at > deadline_s:
                records.append(("dropped_deadline", None))
            else:
                kept.append([at, bits])
        buf = kept
        for _ in range(n_arr):
            if len(buf) < buffer_packets:
                buf.append([t1, float(packet_bits)])
            else:
                records.append(("dropped_overflow", None))
    return records, buf


# ---------------------------------------------------------------------------
# matching: blocking pairs and exhaustive stable-matching existence


def blocking_pairs_reference(pairs, tx_prefs, rx_prefs, q_tx, q_rx):
    """All mutually-acceptable (t, r) pairs that would defect together.

    A pair blocks when t is unmatched to r, t has spare quota or ranks r
    above its worst held partner, and symmetrically for r.
    """
    rank_t = {t: {r: i for i, r in enumerate(lst)} for t, lst in tx_prefs.items()}
    rank_r = {r: {t: i for i, t in enumerate(lst)} for r, lst in rx_prefs.items()}
    held_t: dict = {}
    held_r: dict = {}
    for t, r in pairs:
        held_t.setdefault(t, []).append(r)
        held_r.setdefault(r, []).append(t)
    out = []
    for t, lst in tx_prefs.items():
        for r in lst:
            if (t, r) in pairs or t not in rank_r.get(r, {}):
                continue
            ht = held_t.get(t, [])
            t_ok = len(ht) < q_tx or rank_t[t][r] < max(rank_t[t][x] for x in ht)
            hr = held_r.get(r, [])
            r_ok = len(hr) < q_rx or rank_r[r][t] < max(rank_r[r][x] for x in hr)
            if t_ok and r_ok:
                out.append((t, r))
    return out


def stable_matching_exists(tx_prefs, rx_prefs, q_tx, q_rx):
    """Exhaustive search for any quota-feasible matching with no blocking pair.

    Assigns receivers one at a time, each taking a subset of still-available
    transmitters, and prunes branches where an already-created blocking pair
    can no longer be repaired by later assignments (a transmitter threatened
    by some receiver must end up full with strictly better partners).
    Returns the first stable matching found as a set of pairs, else None.
    """
    rxs = sorted(rx_prefs)
    rank_t = {t: {r: i for i, r in enumerate(lst)} for t, lst in tx_prefs.items()}
    rank_r = {r: {t: i for i, t in enumerate(lst)} for r, lst in rx_prefs.items()}
    mutual = {r: [t for t in rx_prefs[r] if r in rank_t.get(t, {})] for r in rxs}

    def feasible(t, threat_rank, held, depth):
        """Can t still end up safe against its best-ranked threat?"""
        better = [x for x in held.get(t, []) if rank_t[t][x] < threat_rank]
        if len(better) < len(held.get(t, [])):
            return False  # already holds a partner no better than the threat
        future = sum(1 for r in rxs[depth:]
                     if t in rank_r.get(r, {}) and r in rank_t.get(t, {})
                     and rank_t[t][r] < threat_rank)
        return len(better) + future >= q_tx

    def dfs(depth, held, load, threats):
        if depth == len(rxs):
            pairs = {(t, r) for t, hs in held.items() for r in hs}
            if not blocking_pairs_reference(pairs, tx_prefs, rx_prefs, q_tx, q_rx):
                return pairs
            return None
        r = rxs[depth]
        cands = [t for t in mutual[r] if load.get(t, 0) < q_tx]
        choices = []
        for size in range(min(q_rx, len(cands)), -1, -1):
            choices.extend(itertools.combinations(cands, size))
        for subset in choices:
            new_held = {t: hs[:] for t, hs in held.items()}
            new_load = dict(load)
            for t in subset:
                new_held.setdefault(t, []).append(r)
                new_load[t] = new_load.get(t, 0) + 1
            # receivers threaten every rejected transmitter they would accept
            new_threats = dict(threats)
            worst = max((rank_r[r][t] for t in subset), default=-1)
            ok = True
            for t in mutual[r]:
                if t in subset:
                    continue
                if len(subset) < q_rx or rank_r[r][t] < worst:
                    tr = rank_t[t][r]
                    if tr < new_threats.get(t, math.inf):
                        new_threats[t] = tr
            for t, tr in new_threats.items():
                if not feasible(t, tr, new_held, depth + 1):
                    ok = False
                    break
            if not ok:
                continue
            found = dfs(depth + 1, new_held, new_load, new_threats)
            if found is not None:
                return found
        return None

    return dfs(0, {}, {}, {})


# ---------------------------------------------------------------------------
# channel: link budget arithmetic carried out in the dB domain


def sinr_db_domain(tx_power_dbm, target, interferers, noise_dbm_hz, bandwidth_hz):
    """SINR via dBm bookkeeping: each path is summed in dB, then linearized.

    `target` and `interferers` entries are (pathloss_db, gain_tx, gain_rx)
    with linear antenna gains.
    """
    def path_mw(pl_db, g_tx, g_rx):
        dbm = (tx_power_dbm + 10.0 * math.log10(g_tx)
               - pl_db + 10.0 * math.log10(g_rx))
        return 10.0 ** (dbm / 10.0)

    noise_mw = 10.0 ** ((noise_dbm_hz + 10.0 * math.log10(bandwidth_hz)) / 10.0)
    denom = noise_mw + sum(path_mw(*lb) for lb in interferers)
    return path_mw(*target) / denom


# ---------------------------------------------------------------------------
# geometry: closed forms and dense point sampling


def two_disk_extension(dist, r_tx, r_rx):
    """Fraction of the tx disk outside the rx disk, from the lens closed form."""
    if dist >= r_tx + r_rx:
        lens = 0.0
    elif dist <= abs(r_tx - r_rx):
        lens = math.pi * min(r_tx, r_rx) ** 2
    else:
        a = (dist * dist + r_tx * r_tx - r_rx * r_rx) / (2.0 * dist)
        b = dist - a
        lens = (r_tx * r_tx * math.acos(max(-1.0, min(1.0, a / r_tx)))
                - a * math.sqrt(max(0.0, r_tx * r_tx - a * a))
                + r_rx * r_rx * math.acos(max(-1.0, min(1.0, b / r_rx)))
                - b * math.sqrt(max(0.0, r_rx * r_rx - b * b)))
    return max(0.0, 1.0 - lens / (math.pi * r_tx * r_tx))


def point_in_polygon_reference(x, y, polygon):
    """Even-odd crossing test; points on an edge may land either way."""
    inside = False
    n = len(polygon)
    for i in range(n):
        x1, y1 = polygon[i]
        x2, y2 = polygon[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            x_cross = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x_cross > x:
                inside = not inside
    return inside


def segment_hits_polygon_sampled(ax, ay, bx, by, polygon, samples=1000):
    """True when any of `samples` points along the segment falls inside."""
    for i in range(samples):
        f = i / (samples - 1)
        if point_in_polygon_reference(ax + f * (bx - ax), ay + f * (by - ay),
                                      polygon):
            return True
    return False


def segment_hits_rect_sampled(ax, ay, bx, by, cx, cy, heading, half_len,
                              half_wid, samples=1000):
    """Dense sampling of the segment against an oriented rectangle."""
    c = math.cos(heading)
    s = math.sin(heading)
    for i in range(samples):
        f = i / (samples - 1)
        px = ax + f * (bx - ax) - cx
        py = ay + f * (by - ay) - cy
        lx = px * c + py * s
        ly = -px * s + py * c
        if abs(lx) <= half_len and abs(ly) <= half_wid:
            return True
    return False
