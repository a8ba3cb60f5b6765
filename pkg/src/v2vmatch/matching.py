"""Preference construction and deferred-acceptance matching of tx/rx vehicles."""

from __future__ import annotations

from dataclasses import dataclass, field

MIN_DIST = "MINDist"
DELAY_FAIR = "DELAYfair"
CONTEXT_AWARE = "CONTEXTaware"
POLICIES = (MIN_DIST, DELAY_FAIR, CONTEXT_AWARE)


@dataclass(frozen=True)
class Quota:
    """Matching capacities: links per transmitter and per receiver."""

    per_vtx: int = 1
    per_vrx: int = 1

    def __post_init__(self) -> None:
        if self.per_vtx < 1 or self.per_vrx < 1:
            raise ValueError("quotas must be at least 1")


@dataclass(frozen=True)
class PolicyConfig:
    """Matching policy plus receiver-side utility weights (rate, timeliness, extension)."""

    name: str
    omega_d: float = 0.5
    omega_i: float = 0.25
    omega_e: float = 0.25
    alpha: float = 2.0

    def __post_init__(self) -> None:
        if self.name not in POLICIES:
            raise ValueError(f"unknown policy {self.name!r}, expected one of {POLICIES}")
        if self.name != MIN_DIST:
            w = (self.omega_d, self.omega_i, self.omega_e)
            if min(w) < 0 or abs(sum(w) - 1.0) > 1e-9:
                raise ValueError("utility weights must be non-negative and sum to 1")
        if self.name == DELAY_FAIR and \
                (self.omega_d, self.omega_i, self.omega_e) != (1.0, 0.0, 0.0):
            raise ValueError("the delay-fair policy fixes its weights to (1, 0, 0)")

    @classmethod
    def named(cls, name: str) -> "PolicyConfig":
        if name == DELAY_FAIR:
            return cls(name, 1.0, 0.0, 0.0)
        return cls(name)


@dataclass
class PairFeatures:
    """Per candidate pair inputs to preference construction."""

    distance_m: float
    r_tx_norm: float
    r_rx_norm: float
    timeliness: float
    extension: float
    building_blocked: bool = False


@dataclass
class PreferenceProfile:
    """Descending-preference candidate lists for both sides."""

    tx_prefs: dict[str, list[str]] = field(default_factory=dict)
    rx_prefs: dict[str, list[str]] = field(default_factory=dict)

    def tx_rank(self) -> dict[str, dict[str, int]]:
        return {t: {r: i for i, r in enumerate(lst)} for t, lst in self.tx_prefs.items()}

    def rx_rank(self) -> dict[str, dict[str, int]]:
        return {r: {t: i for i, t in enumerate(lst)} for r, lst in self.rx_prefs.items()}


@dataclass
class Matching:
    tx_to_rx: dict[str, list[str]] = field(default_factory=dict)
    rx_to_tx: dict[str, list[str]] = field(default_factory=dict)

    def pairs(self) -> list[tuple[str, str]]:
        return sorted((t, r) for t, rs in self.tx_to_rx.items() for r in rs)


def utility_vtx(quality: int, r_hat_norm: float, radii: tuple[float, ...],
                alpha: float = 2.0) -> float:
    """Transmitter-side utility: rate scaled by the partner's sensing-range share.

    quality indexes `radii` from 1; the share against the largest radius is
    raised to `alpha` so low-coverage partners are boosted when alpha > 1
    (alpha-fair allocation across quality classes).
    """
    if not 1 <= quality <= len(radii):
        raise ValueError(f"quality level {quality} outside 1..{len(radii)}")
    if r_hat_norm <= 0.0:
        raise ValueError("normalized rate must be positive to rank a candidate")
    share = radii[quality - 1] / radii[-1]
    return -1.0 / (share ** alpha * r_hat_norm)


def utility_vrx(r_hat_norm: float, timeliness: float, extension: float,
                policy: PolicyConfig) -> float:
    """Receiver-side utility: weighted mix of rate, timeliness and new coverage."""
    mix = (policy.omega_d * r_hat_norm + policy.omega_i * timeliness
           + policy.omega_e * extension)
    if mix <= 0.0:
        raise ValueError("utility mix must be positive to rank a candidate")
    return -1.0 / mix


class RateEstimator:
    """Per-pair smoothed rate estimates refreshed once per scheduling epoch.

    Pairs served in the last epoch blend the observation into their held
    estimate with weight `eta`; every other candidate pair is valued at its
    optimistic snapshot rate (perfectly aligned, interference free), so a
    pair that stops being served reverts to optimism instead of carrying a
    stale measurement.
    """

    def __init__(self, eta: float = 0.3):
        if not 0.0 < eta <= 1.0:
            raise ValueError("EMA weight must lie in (0, 1]")
        self.eta = eta
        self._held: dict[tuple[str, str], float] = {}

    def estimate(self, pair: tuple[str, str]) -> float:
        """Current estimate; the pair must have been a candidate last update."""
        return self._held[pair]

    def update(self, observed: dict[tuple[str, str], float],
               snapshot: dict[tuple[str, str], float]) -> dict[tuple[str, str], float]:
        """Advance one epoch and return estimates for the snapshot's pairs.

        `snapshot` enumerates the current candidate pairs with their
        optimistic rates; `observed` carries mean served rates from the last
        epoch. Pairs absent from the snapshot are dropped entirely.
        """
        held = self._held
        new = {}
        for pair, snap in snapshot.items():
            obs = observed.get(pair)
            if obs is None:
                new[pair] = snap
            else:
                new[pair] = (1.0 - self.eta) * held.get(pair, snap) + self.eta * obs
        self._held = new
        return dict(new)


def normalize_rates(estimates: dict[tuple[str, str], float],
                    by_tx: bool) -> dict[tuple[str, str], float]:
    """Scale each pair estimate by the max over its own side's candidates.

    A side whose candidates all estimate zero gets the uniform fallback 1 so
    the group stays rankable.
    """
    best: dict[str, float] = {}
    for (t, r), v in estimates.items():
        key = t if by_tx else r
        best[key] = max(best.get(key, 0.0), v)
    out = {}
    for (t, r), v in estimates.items():
        denom = best[t if by_tx else r]
        out[(t, r)] = v / denom if denom > 0.0 else 1.0
    return out


def build_preferences(tx_ids: list[str], rx_ids: list[str],
                      features: dict[tuple[str, str], PairFeatures],
                      qualities: dict[str, int], radii: tuple[float, ...],
                      policy: PolicyConfig,
                      quality_side: str = "rx") -> PreferenceProfile:
    """Rank mutually acceptable candidates for both sides under one policy.

    MINDist ranks by distance alone and keeps building-blocked pairs (it has
    no channel knowledge). The utility policies work on learned rates, so
    blocked pairs and pairs whose utility mix is zero are dropped from both
    lists. Ties break toward the smaller vehicle id.
    """
    if quality_side not in ("rx", "tx"):
        raise ValueError("quality_side must be 'rx' or 'tx'")
    tx_scored: dict[str, list[tuple[float, str]]] = {t: [] for t in tx_ids}
    rx_scored: dict[str, list[tuple[float, str]]] = {r: [] for r in rx_ids}
    for t in tx_ids:
        for r in rx_ids:
            feat = features.get((t, r))
            if feat is None:
                continue
            if policy.name == MIN_DIST:
                tx_scored[t].append((feat.distance_m, r))
                rx_scored[r].append((feat.distance_m, t))
                continue
            if feat.building_blocked:
                continue
            try:
                q = qualities[r] if quality_side == "rx" else qualities[t]
                u_tx = utility_vtx(q, feat.r_tx_norm, radii, policy.alpha)
                u_rx = utility_vrx(feat.r_rx_norm, feat.timeliness, feat.extension, policy)
            except ValueError:
                continue
            tx_scored[t].append((-u_tx, r))
            rx_scored[r].append((-u_rx, t))
    prof = PreferenceProfile()
    for t, scored in tx_scored.items():
        prof.tx_prefs[t] = [r for _, r in sorted(scored)]
    for r, scored in rx_scored.items():
        prof.rx_prefs[r] = [t for _, t in sorted(scored)]
    return prof


def deferred_acceptance(prefs: PreferenceProfile, quota: Quota,
                        proposer: str = "vtx") -> Matching:
    """Many-to-many deferred acceptance over the given preference lists.

    Proposers walk their lists while they have spare capacity; reviewers hold
    the best proposals up to their quota and bump the worst when a better one
    arrives. The result is pairwise stable for the listed candidates.
    """
    if proposer == "vtx":
        prop_prefs, rev_prefs = prefs.tx_prefs, prefs.rx_prefs
        cap_prop, cap_rev = quota.per_vtx, quota.per_vrx
    elif proposer == "vrx":
        prop_prefs, rev_prefs = prefs.rx_prefs, prefs.tx_prefs
        cap_prop, cap_rev = quota.per_vrx, quota.per_vtx
    else:
        raise ValueError("proposer must be 'vtx' or 'vrx'")

    rev_rank = {rev: {p: i for i, p in enumerate(lst)} for rev, lst in rev_prefs.items()}
    pointer = {p: 0 for p in prop_prefs}
    spare = {p: cap_prop for p in prop_prefs}
    holds: dict[str, list[str]] = {rev: [] for rev in rev_prefs}
    # stack of proposers that still owe proposals; order does not affect the result
    active = [p for p in sorted(prop_prefs) if prop_prefs[p]]
    while active:
        p = active[-1]
        if spare[p] == 0 or pointer[p] >= len(prop_prefs[p]):
            active.pop()
            continue
        rev = prop_prefs[p][pointer[p]]
        pointer[p] += 1
        rank = rev_rank.get(rev, {}).get(p)
        if rank is None:
            continue
        held = holds[rev]
        held.append(p)
        spare[p] -= 1
        if len(held) > cap_rev:
            worst = max(held, key=lambda q: rev_rank[rev][q])
            held.remove(worst)
            spare[worst] += 1
            if spare[worst] > 0 and worst not in active:
                active.append(worst)

    matching = Matching()
    for rev, held in holds.items():
        for p in held:
            t, r = (p, rev) if proposer == "vtx" else (rev, p)
            matching.tx_to_rx.setdefault(t, []).append(r)
            matching.rx_to_tx.setdefault(r, []).append(t)
    for lst in matching.tx_to_rx.values():
        lst.sort()
    for lst in matching.rx_to_tx.values():
        lst.sort()
    return matching


def audit_stability(matching: Matching, prefs: PreferenceProfile,
                    quota: Quota) -> list[tuple[str, str]]:
    """All blocking pairs: mutually listed, unmatched, and both sides gain.

    A side gains by adding the partner when it has spare quota, or by swapping
    out its worst current partner for a preferred one. An empty list means the
    matching is pairwise stable.
    """
    tx_rank = prefs.tx_rank()
    rx_rank = prefs.rx_rank()
    blocking = []
    for t, cand in sorted(prefs.tx_prefs.items()):
        t_matches = matching.tx_to_rx.get(t, [])
        t_worst = max((tx_rank[t][r] for r in t_matches), default=-1)
        for r in cand:
            if r in t_matches or t not in rx_rank.get(r, {}):
                continue
            t_gains = len(t_matches) < quota.per_vtx or tx_rank[t][r] < t_worst
            if not t_gains:
                continue
            r_matches = matching.rx_to_tx.get(r, [])
            r_worst = max((rx_rank[r][q] for q in r_matches), default=-1)
            r_gains = len(r_matches) < quota.per_vrx or rx_rank[r][t] < r_worst
            if r_gains:
                blocking.append((t, r))
    return blocking
