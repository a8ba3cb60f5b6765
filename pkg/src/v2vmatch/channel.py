"""Millimeter-wave link budget: pathloss, sectored antenna gains, SINR, slot rate."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class PathlossParams:
    """Log-distance pathloss with blocker-dependent exponent and intercept.

    exponents[n] and intercepts_db[n] apply to a link with n intervening
    vehicle bodies; counts past the end of the table saturate at the last
    entry. A link cut by a building wall gets `building_penalty_db` on top.
    """

    exponents: tuple[float, ...] = (2.66, 3.01, 3.36)
    intercepts_db: tuple[float, ...] = (68.6, 72.6, 76.6)
    atmospheric_db_per_km: float = 15.0
    building_penalty_db: float = 400.0

    def __post_init__(self) -> None:
        if len(self.exponents) != len(self.intercepts_db) or not self.exponents:
            raise ValueError("exponent and intercept tables must align and be non-empty")


@dataclass(frozen=True)
class AntennaConfig:
    """Ideal sectored antennas on both link ends plus the beam-search budget.

    phi_* are operating beamwidths, psi_* the sector widths swept during
    alignment, `sidelobe` the gain outside the main lobe and `pilot_s` the
    duration of one pilot transmission.
    """

    phi_tx: float
    phi_rx: float
    psi_tx: float = math.radians(45.0)
    psi_rx: float = math.radians(45.0)
    sidelobe: float = 0.01
    pilot_s: float = 20e-6

    def __post_init__(self) -> None:
        for phi, psi in ((self.phi_tx, self.psi_tx), (self.phi_rx, self.psi_rx)):
            if not 0.0 < phi <= TWO_PI:
                raise ValueError("beamwidth must lie in (0, 2*pi]")
            if not phi <= psi <= TWO_PI:
                raise ValueError("sector width must lie in [beamwidth, 2*pi]")
        if not 0.0 <= self.sidelobe < 1.0:
            raise ValueError("sidelobe gain must lie in [0, 1)")
        if self.pilot_s < 0.0:
            raise ValueError("pilot duration must be non-negative")


@dataclass(frozen=True)
class RadioConfig:
    """Transmit power, noise density, bandwidth and the transmission slot."""

    bandwidth_hz: float = 2.16e9
    noise_dbm_hz: float = -174.0
    tx_power_dbm: float = 15.0
    slot_s: float = 2e-3

    def __post_init__(self) -> None:
        if self.bandwidth_hz <= 0 or self.slot_s <= 0:
            raise ValueError("bandwidth and slot duration must be positive")

    def noise_mw(self) -> float:
        return 10.0 ** (self.noise_dbm_hz / 10.0) * self.bandwidth_hz

    def tx_power_mw(self) -> float:
        return 10.0 ** (self.tx_power_dbm / 10.0)


@dataclass(frozen=True)
class LinkGeometry:
    """Instantaneous geometric state of one directed link."""

    distance_m: float
    blockers: int
    building_blocked: bool
    align_err_tx: float = 0.0
    align_err_rx: float = 0.0

    def __post_init__(self) -> None:
        if self.distance_m <= 0:
            raise ValueError("link distance must be positive")
        if self.blockers < 0:
            raise ValueError("blocker count must be non-negative")


class LinkBudget(NamedTuple):
    """Pathloss and the two antenna gains seen by one transmission."""

    pathloss_db: float
    gain_tx: float
    gain_rx: float


def pathloss_db(geom: LinkGeometry, params: PathlossParams) -> float:
    """Pathloss in dB for one link state."""
    idx = min(geom.blockers, len(params.exponents) - 1)
    pl = (10.0 * params.exponents[idx] * math.log10(geom.distance_m)
          + params.intercepts_db[idx]
          + params.atmospheric_db_per_km * geom.distance_m / 1000.0)
    if geom.building_blocked:
        pl += params.building_penalty_db
    return pl


def wrap_angle(theta: float) -> float:
    """Wrap to (-pi, pi]."""
    out = math.fmod(theta + math.pi, TWO_PI)
    if out <= 0.0:
        out += TWO_PI
    return out - math.pi


def antenna_gain(phi: float, sidelobe: float, theta: float) -> float:
    """Ideal sectored gain at offset `theta` from boresight.

    Inside the main lobe (|theta| <= phi/2) the gain conserves radiated power
    against the sidelobe floor: phi*G + (2*pi - phi)*sidelobe = 2*pi.
    """
    if not 0.0 < phi <= TWO_PI:
        raise ValueError("beamwidth must lie in (0, 2*pi]")
    if not 0.0 <= sidelobe < 1.0:
        raise ValueError("sidelobe gain must lie in [0, 1)")
    if abs(wrap_angle(theta)) <= phi / 2.0:
        return (TWO_PI - (TWO_PI - phi) * sidelobe) / phi
    return sidelobe


def alignment_delay(ant: AntennaConfig) -> float:
    """Exhaustive beam-search time: one pilot per tx/rx beam pair combination.

    The sector-to-beamwidth quotient per end counts that end's candidate beam
    positions; their product is the number of pilots.
    """
    return (ant.psi_tx / ant.phi_tx) * (ant.psi_rx / ant.phi_rx) * ant.pilot_s


def sinr(target: LinkBudget, interferers: list[LinkBudget], radio: RadioConfig) -> float:
    """Linear SINR of the target transmission against co-slot interferers and noise.

    Every transmitter radiates the common configured power; each budget entry
    already carries the geometry-dependent gains toward this receiver.
    """
    p = radio.tx_power_mw()
    sig = p * target.gain_tx * 10.0 ** (-target.pathloss_db / 10.0) * target.gain_rx
    interf = 0.0
    for lb in interferers:
        interf += p * lb.gain_tx * 10.0 ** (-lb.pathloss_db / 10.0) * lb.gain_rx
    return sig / (interf + radio.noise_mw())


def slot_rate(sinr_lin: float, tau: float, radio: RadioConfig,
              charge_alignment: bool = True) -> float:
    """Shannon rate over one slot, net of alignment time when charged.

    With charging, a beam-search time tau >= slot duration floors the rate at
    zero; without, the full slot carries payload.
    """
    if sinr_lin < 0:
        raise ValueError("SINR must be non-negative")
    frac = 1.0 - tau / radio.slot_s if charge_alignment else 1.0
    if frac <= 0.0:
        return 0.0
    return frac * radio.bandwidth_hz * math.log2(1.0 + sinr_lin)
