"""Experiment front end: config parsing, sweeps, CSV and summary emission.

The config format is deliberately flat: one `key = value` per line, `#` or
`;` line comments, no sections. Every simulation parameter maps to exactly
one documented key (see --print-defaults); unknown keys are rejected so a
typo cannot silently fall back to a default.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import itertools
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import matching, queueing, simulator
from .geometry import BuildingMap, load_buildings
from .mobility import JunctionConfig, Scenario, load_scenario, synth_junction_scenario
from .simulator import SimConfig, aggregate_cdf


class ConfigError(ValueError):
    """Unknown key, unparseable value or violated constraint."""


# ---------------------------------------------------------------------------
# value converters

def _as_int(key: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None


def _as_float(key: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {raw!r}") from None


def _as_bool(key: str, raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected true/false, got {raw!r}")


def _as_str(key: str, raw: str) -> str:
    return raw


def _split_list(key: str, raw: str) -> list[str]:
    items = [s.strip() for s in raw.split(",") if s.strip()]
    if not items:
        raise ConfigError(f"{key}: list must be non-empty")
    return items


def _as_floats(key: str, raw: str) -> tuple[float, ...]:
    return tuple(_as_float(key, s) for s in _split_list(key, raw))


def _as_ints(key: str, raw: str) -> tuple[int, ...]:
    return tuple(_as_int(key, s) for s in _split_list(key, raw))


def _as_policy(key: str, raw: str) -> str:
    if raw not in matching.POLICIES:
        raise ConfigError(f"{key}: unknown policy {raw!r}, expected one of "
                          f"{', '.join(matching.POLICIES)}")
    return raw


def _as_policies(key: str, raw: str) -> tuple[str, ...]:
    return tuple(_as_policy(key, s) for s in _split_list(key, raw))


def _as_scenario(key: str, raw: str) -> str:
    if raw not in ("synthetic", "trace"):
        raise ConfigError(f"{key}: expected 'synthetic' or 'trace', got {raw!r}")
    return raw


def _as_side(key: str, raw: str) -> str:
    if raw not in ("tx", "rx"):
        raise ConfigError(f"{key}: expected 'tx' or 'rx', got {raw!r}")
    return raw


def _as_proposer(key: str, raw: str) -> str:
    if raw not in ("vtx", "vrx"):
        raise ConfigError(f"{key}: expected 'vtx' or 'vrx', got {raw!r}")
    return raw


# ---------------------------------------------------------------------------
# key registries: config key -> (dataclass field, converter, help)

_SIM_KEYS = {
    "duration_s": ("duration_s", _as_float, "simulated time per run, seconds"),
    "slot_s": ("slot_s", _as_float, "transmission slot length, seconds"),
    "slots_per_epoch": ("slots_per_epoch", _as_int,
                        "transmission slots per scheduling epoch"),
    "seed": ("seed", _as_int, "RNG seed when no seed sweep is given"),
    "phi_deg": ("phi_deg", _as_float, "mainlobe beamwidth, degrees"),
    "psi_deg": ("psi_deg", _as_float, "sector swept during beam search, degrees"),
    "sidelobe": ("sidelobe", _as_float, "sidelobe gain, linear, in [0, 1)"),
    "pilot_s": ("pilot_s", _as_float, "pilot time per probed beam pair, seconds"),
    "bandwidth_hz": ("bandwidth_hz", _as_float, "channel bandwidth, Hz"),
    "noise_dbm_hz": ("noise_dbm_hz", _as_float, "noise density, dBm/Hz"),
    "tx_power_dbm": ("tx_power_dbm", _as_float, "transmit power, dBm"),
    "pl_exponents": ("pl_exponents", _as_floats,
                     "pathloss exponents for 0, 1, 2+ blockers"),
    "pl_intercepts_db": ("pl_intercepts_db", _as_floats,
                         "pathloss intercepts for 0, 1, 2+ blockers, dB"),
    "atmospheric_db_per_km": ("atmospheric_db_per_km", _as_float,
                              "atmospheric absorption, dB/km"),
    "building_penalty_db": ("building_penalty_db", _as_float,
                            "extra loss when a building cuts the segment, dB"),
    "packet_bits": ("packet_bits", _as_float, "payload per packet, bits"),
    "arrival_rate_pps": ("arrival_rate_pps", _as_float,
                         "Poisson packet arrival rate per link, packets/s"),
    "buffer_packets": ("buffer_packets", _as_int, "queue capacity, packets"),
    "deadline_s": ("deadline_s", _as_float, "delivery deadline, seconds"),
    "quota_tx": ("quota_tx", _as_int, "max receivers one transmitter serves"),
    "quota_rx": ("quota_rx", _as_int, "max transmitters one receiver accepts"),
    "policy": ("policy_name", _as_policy,
               "matching policy: " + ", ".join(matching.POLICIES)),
    "omega_d": ("omega_d", _as_float, "receiver utility weight on rate"),
    "omega_i": ("omega_i", _as_float, "receiver utility weight on timeliness"),
    "omega_e": ("omega_e", _as_float, "receiver utility weight on coverage gain"),
    "alpha": ("alpha", _as_float, "fairness exponent in the transmitter utility"),
    "proposer": ("proposer", _as_proposer, "proposing side: vtx or vrx"),
    "quality_side": ("quality_side", _as_side,
                     "whose sensing quality scales the transmitter utility"),
    "radii_m": ("radii_m", _as_floats, "sensing radius per quality level, meters"),
    "min_packets": ("min_packets", _as_ints,
                    "delivered packets needed per quality level and epoch"),
    "ema_eta": ("ema_eta", _as_float, "learning weight of the rate estimator"),
    "cell_m": ("cell_m", _as_float, "grid cell size for coverage overlap, meters"),
    "corridor_m": ("corridor_m", _as_float,
                   "half-width of the route-similarity corridor, meters"),
    "timeliness_step_m": ("timeliness_step_m", _as_float,
                          "sample spacing along the future route, meters"),
    "horizon_m": ("horizon_m", _as_float, "future route horizon, meters"),
    "past_window_m": ("past_window_m", _as_float, "past trace window, meters"),
    "alignment_per_epoch": ("alignment_per_epoch", _as_bool,
                            "charge beam search once per epoch (else per slot)"),
    "idle_tx_interfere": ("idle_tx_interfere", _as_bool,
                          "unmatched transmitters still radiate"),
    "count_overflow_drops": ("count_overflow_drops", _as_bool,
                             "include buffer overflows in drop probability"),
}

_JUNCTION_KEYS = {
    "junction_n_tx": ("n_tx", _as_int, "transmitter vehicles spawned"),
    "junction_n_rx": ("n_rx", _as_int, "receiver vehicles spawned"),
    "junction_arm_m": ("arm_m", _as_float, "approach arm length, meters"),
    "junction_exit_m": ("exit_m", _as_float,
                        "outbound leg length past the box, meters"),
    "junction_box_half_m": ("box_half_m", _as_float,
                            "half-size of the junction box, meters"),
    "junction_lane_offset_m": ("lane_offset_m", _as_float,
                               "lane center offset from the arm axis, meters"),
    "junction_setback_m": ("building_setback_m", _as_float,
                           "corner building setback from the box, meters"),
    "junction_building_m": ("building_size_m", _as_float,
                            "corner building edge length, meters"),
    "junction_period_s": ("signal_period_s", _as_float,
                          "traffic signal cycle, seconds"),
    "junction_speed_min_mps": ("speed_min_mps", _as_float,
                               "slowest cruise speed, m/s"),
    "junction_speed_max_mps": ("speed_max_mps", _as_float,
                               "fastest cruise speed, m/s"),
    "junction_min_gap_m": ("min_gap_m", _as_float,
                           "minimum bumper-to-bumper gap, meters"),
    "junction_stop_offset_m": ("stop_offset_m", _as_float,
                               "stop line offset before the box, meters"),
    "junction_spawn_margin_m": ("spawn_margin_m", _as_float,
                                "clear space kept at spawn, meters"),
}

_SPEC_KEYS = {
    "scenario": ("scenario", _as_scenario, "scenario source: synthetic or trace"),
    "trace_file": ("trace_file", _as_str, "vehicle trace CSV (trace scenario)"),
    "routes_file": ("routes_file", _as_str, "planned routes CSV, optional"),
    "buildings_file": ("buildings_file", _as_str, "building polygons CSV, optional"),
    "out_dir": ("out_dir", _as_str, "output directory for runs and summary"),
    "policies": ("policies", _as_policies, "policy sweep list"),
    "phi_deg_list": ("phi_deg", _as_floats, "beamwidth sweep list, degrees"),
    "quota_rx_list": ("quota_rx", _as_ints, "receiver quota sweep list"),
    "seeds": ("seeds", _as_ints, "seed sweep list"),
}


@dataclass
class ExperimentSpec:
    """One experiment: a scenario source plus the sweep axes and output dir."""

    scenario: str = "synthetic"
    trace_file: str = ""
    routes_file: str = ""
    buildings_file: str = ""
    out_dir: str = "runs"
    policies: tuple[str, ...] = ()
    phi_deg: tuple[float, ...] = ()
    quota_rx: tuple[int, ...] = ()
    seeds: tuple[int, ...] = ()
    junction: JunctionConfig = dataclasses.field(default_factory=JunctionConfig)


def _read_pairs(path: str) -> list[tuple[str, str]]:
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#") or text.startswith(";"):
                continue
            if "=" not in text:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, _, raw = text.partition("=")
            pairs.append((key.strip(), raw.strip()))
    return pairs


def parse_config(path: str | None = None,
                 overrides: dict[str, str] | None = None
                 ) -> tuple[ExperimentSpec, SimConfig]:
    """Build the experiment spec and base simulation config.

    `path` may be None for pure defaults. `overrides` are applied after the
    file with the same key names (the command-line flags route through here).
    Later assignments win. All keys are validated; unknown keys are errors.
    """
    pairs = _read_pairs(path) if path else []
    for key, raw in (overrides or {}).items():
        pairs.append((key, raw))

    sim_kwargs: dict = {}
    junc_kwargs: dict = {}
    spec_kwargs: dict = {}
    for key, raw in pairs:
        if key in _SIM_KEYS:
            field_name, conv, _ = _SIM_KEYS[key]
            sim_kwargs[field_name] = conv(key, raw)
        elif key in _JUNCTION_KEYS:
            field_name, conv, _ = _JUNCTION_KEYS[key]
            junc_kwargs[field_name] = conv(key, raw)
        elif key in _SPEC_KEYS:
            field_name, conv, _ = _SPEC_KEYS[key]
            spec_kwargs[field_name] = conv(key, raw)
        else:
            raise ConfigError(f"unknown config key {key!r}")

    try:
        base = SimConfig(**sim_kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    try:
        junction = JunctionConfig(duration_s=base.duration_s, slot_s=base.slot_s,
                                  n_quality=len(base.radii_m), **junc_kwargs)
    except ValueError as exc:
        raise ConfigError(f"junction: {exc}") from None

    spec_kwargs.setdefault("policies", (base.policy_name,))
    spec_kwargs.setdefault("phi_deg", (base.phi_deg,))
    spec_kwargs.setdefault("quota_rx", (base.quota_rx,))
    spec_kwargs.setdefault("seeds", (base.seed,))
    spec = ExperimentSpec(junction=junction, **spec_kwargs)

    if spec.scenario == "trace":
        if not spec.trace_file:
            raise ConfigError("trace_file: required when scenario = trace")
        for key, value in (("trace_file", spec.trace_file),
                           ("routes_file", spec.routes_file),
                           ("buildings_file", spec.buildings_file)):
            if value and not os.path.isfile(value):
                raise ConfigError(f"{key}: no such file {value!r}")
    for phi in spec.phi_deg:
        if not 0.0 < phi <= base.psi_deg:
            raise ConfigError(f"phi_deg_list: beamwidth {phi} outside "
                              f"(0, psi_deg={base.psi_deg}]")
    for q in spec.quota_rx:
        if q < 1:
            raise ConfigError(f"quota_rx_list: quota {q} must be >= 1")
    return spec, base


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return format(value, "g")
    return str(value)


def print_defaults(stream=None) -> None:
    """Emit every config key with its default and meaning, as a valid config."""
    stream = stream or sys.stdout
    base = SimConfig()
    junction = JunctionConfig()
    spec = ExperimentSpec(policies=(base.policy_name,), phi_deg=(base.phi_deg,),
                          quota_rx=(base.quota_rx,), seeds=(base.seed,))
    sections = (
        ("simulation", _SIM_KEYS, base),
        ("synthetic junction", _JUNCTION_KEYS, junction),
        ("experiment", _SPEC_KEYS, spec),
    )
    for title, table, obj in sections:
        stream.write(f"# {title}\n")
        for key, (field_name, _, help_text) in table.items():
            value = getattr(obj, field_name)
            stream.write(f"# {help_text}\n{key} = {_format_value(value)}\n")
        stream.write("\n")


# ---------------------------------------------------------------------------
# running experiments

def _run_id(policy: str, phi: float, qrx: int, seed: int) -> str:
    return f"{policy}_phi{format(phi, 'g')}_qrx{qrx}_seed{seed}"


def _build_scenario(spec: ExperimentSpec, cfg: SimConfig, seed: int,
                    cache: dict) -> Scenario:
    if spec.scenario == "synthetic":
        if seed not in cache:
            cache[seed] = synth_junction_scenario(spec.junction, seed)
        return cache[seed]
    if "trace" not in cache:
        buildings = load_buildings(spec.buildings_file) if spec.buildings_file \
            else BuildingMap()
        cache["trace"] = load_scenario(spec.trace_file, spec.routes_file or None,
                                       buildings, cfg.slot_s)
    return cache["trace"]


def _execute_run(run_dir: str, scenario: Scenario, cfg: SimConfig) -> dict:
    """Simulate one configuration, stream the four CSVs, return the summary."""
    os.makedirs(run_dir, exist_ok=True)
    esi_samples: list[np.ndarray] = []
    delays: list[float] = []
    p_drops: list[float] = []
    qualities: list[int] = []
    success_by_epoch: list[float] = []
    n_links = []
    counts = {queueing.DELIVERED: 0, queueing.DROPPED_DEADLINE: 0,
              queueing.DROPPED_OVERFLOW: 0}
    esi_total = 0.0
    epochs = 0

    paths = {name: os.path.join(run_dir, f"{name}.csv")
             for name in ("esi", "delay", "drops", "matching")}
    with open(paths["esi"], "w", encoding="utf-8", newline="") as f_esi, \
            open(paths["delay"], "w", encoding="utf-8", newline="") as f_delay, \
            open(paths["drops"], "w", encoding="utf-8", newline="") as f_drops, \
            open(paths["matching"], "w", encoding="utf-8", newline="") as f_match:
        w_esi = csv.writer(f_esi, lineterminator="\n")
        w_delay = csv.writer(f_delay, lineterminator="\n")
        w_drops = csv.writer(f_drops, lineterminator="\n")
        w_match = csv.writer(f_match, lineterminator="\n")
        w_esi.writerow(["epoch", "slot", "vrx_id", "esi_bits"])
        w_delay.writerow(["epoch", "tx_id", "rx_id", "outcome", "delay_s"])
        w_drops.writerow(["epoch", "tx_id", "rx_id", "p_drop"])
        w_match.writerow(["epoch", "vtx_id", "vrx_id", "policy"])

        for frame in simulator.run(scenario, cfg):
            epochs += 1
            n_links.append(len(frame.links))
            for j, rx in enumerate(frame.rx_ids):
                col = frame.esi_bits[:, j]
                for slot in range(col.shape[0]):
                    w_esi.writerow([frame.epoch, slot, rx, float(col[slot])])
            nonzero = frame.esi_bits[frame.esi_bits > 0.0]
            if nonzero.size:
                esi_samples.append(nonzero.astype(float))
                esi_total += float(nonzero.sum())
            for rec in frame.records:
                w_delay.writerow([frame.epoch, rec.tx_id, rec.rx_id, rec.outcome,
                                  "" if rec.delay_s is None else float(rec.delay_s)])
                counts[rec.outcome] += 1
                if rec.outcome == queueing.DELIVERED:
                    delays.append(float(rec.delay_s))
            for (t, r) in frame.links:
                w_drops.writerow([frame.epoch, t, r, float(frame.p_drop[(t, r)])])
                w_match.writerow([frame.epoch, t, r, frame.policy])
                p_drops.append(float(frame.p_drop[(t, r)]))
                qualities.append(int(frame.quality[(t, r)]))
            attempts = sum(1 for rec in frame.records
                           if rec.outcome != queueing.DROPPED_OVERFLOW)
            if attempts:
                ok = sum(1 for rec in frame.records
                         if rec.outcome == queueing.DELIVERED)
                success_by_epoch.append(ok / attempts)

    _validate_run_dir(run_dir)
    nonzero_all = np.concatenate(esi_samples) if esi_samples else np.array([])
    total = sum(counts.values())
    return {
        "epochs": epochs,
        "mean_links": float(np.mean(n_links)) if n_links else 0.0,
        "esi_nonzero_bits": aggregate_cdf(nonzero_all),
        "esi_total_bits": esi_total,
        "delay_s": aggregate_cdf(delays),
        "p_drop": aggregate_cdf(p_drops),
        "delivered": counts[queueing.DELIVERED],
        "dropped_deadline": counts[queueing.DROPPED_DEADLINE],
        "dropped_overflow": counts[queueing.DROPPED_OVERFLOW],
        "delivered_fraction": counts[queueing.DELIVERED] / total if total else None,
        "success_rate_mean_epoch": float(np.mean(success_by_epoch))
        if success_by_epoch else None,
        "mean_quality": float(np.mean(qualities)) if qualities else None,
    }


_SCHEMAS = {
    "esi": ["epoch", "slot", "vrx_id", "esi_bits"],
    "delay": ["epoch", "tx_id", "rx_id", "outcome", "delay_s"],
    "drops": ["epoch", "tx_id", "rx_id", "p_drop"],
    "matching": ["epoch", "vtx_id", "vrx_id", "policy"],
}

_OUTCOMES = (queueing.DELIVERED, queueing.DROPPED_DEADLINE,
             queueing.DROPPED_OVERFLOW)


def _validate_run_dir(run_dir: str) -> None:
    """Schema-check the four per-run CSVs; raise on any malformed row."""
    for name, header in _SCHEMAS.items():
        path = os.path.join(run_dir, f"{name}.csv")
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            got = next(reader, None)
            if got != header:
                raise RuntimeError(f"{path}: bad header {got!r}")
            for row in reader:
                if len(row) != len(header):
                    raise RuntimeError(f"{path}: bad row arity {row!r}")
                int(row[0])
                if name == "esi":
                    if int(row[1]) < 0 or float(row[3]) < 0.0:
                        raise RuntimeError(f"{path}: bad values {row!r}")
                elif name == "delay":
                    if row[3] not in _OUTCOMES:
                        raise RuntimeError(f"{path}: bad outcome {row!r}")
                    if row[4] and float(row[4]) < 0.0:
                        raise RuntimeError(f"{path}: negative delay {row!r}")
                elif name == "drops":
                    if not 0.0 <= float(row[3]) <= 1.0:
                        raise RuntimeError(f"{path}: bad p_drop {row!r}")


def run_experiment(spec: ExperimentSpec, base: SimConfig) -> int:
    """Execute the sweep Cartesian product; return a process exit status.

    Each run writes its own directory under spec.out_dir; a cross-run
    summary.json is always written. Non-zero status if any run failed.
    """
    os.makedirs(spec.out_dir, exist_ok=True)
    cache: dict = {}
    failed: list[str] = []
    runs = []
    for policy, phi, qrx, seed in itertools.product(
            spec.policies, spec.phi_deg, spec.quota_rx, spec.seeds):
        cfg = dataclasses.replace(base, policy_name=policy, phi_deg=phi,
                                  quota_rx=qrx, seed=seed)
        run_id = _run_id(policy, phi, qrx, seed)
        run_dir = os.path.join(spec.out_dir, run_id)
        try:
            scenario = _build_scenario(spec, cfg, seed, cache)
            stats = _execute_run(run_dir, scenario, cfg)
        except Exception as exc:
            failed.append(run_id)
            print(f"run {run_id} failed: {exc}", file=sys.stderr)
            continue
        stats.update({"run": run_id, "policy": policy, "phi_deg": phi,
                      "quota_rx": qrx, "seed": seed})
        runs.append(stats)

    summary = {
        "schema": "v2vmatch-summary-1",
        "spec": {
            "scenario": spec.scenario,
            "policies": list(spec.policies),
            "phi_deg": list(spec.phi_deg),
            "quota_rx": list(spec.quota_rx),
            "seeds": list(spec.seeds),
        },
        "config": dataclasses.asdict(base),
        "runs": sorted(runs, key=lambda r: r["run"]),
        "failed": sorted(failed),
    }
    with open(os.path.join(spec.out_dir, "summary.json"), "w",
              encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# entry point

def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="v2vmatch",
        description="Simulate context-aware mmWave V2V link scheduling and "
                    "emit per-run CSV metrics plus a cross-run summary.")
    parser.add_argument("--config", metavar="PATH",
                        help="flat key=value config file")
    parser.add_argument("--out", metavar="DIR", help="output directory")
    parser.add_argument("--seeds", metavar="A,B,C", help="seed sweep")
    parser.add_argument("--policy", metavar="NAME",
                        help="single matching policy to run")
    parser.add_argument("--phi-deg", metavar="LIST", dest="phi_deg",
                        help="beamwidth sweep, degrees")
    parser.add_argument("--quota-rx", metavar="LIST", dest="quota_rx",
                        help="receiver quota sweep")
    parser.add_argument("--synthetic", action="store_true",
                        help="force the synthetic junction scenario")
    parser.add_argument("--validate-only", action="store_true",
                        help="parse and check the config, then exit")
    parser.add_argument("--print-defaults", action="store_true",
                        help="print every config key with its default value")
    args = parser.parse_args(argv)

    if args.print_defaults:
        print_defaults()
        return 0

    overrides: dict[str, str] = {}
    if args.seeds:
        overrides["seeds"] = args.seeds
    if args.policy:
        overrides["policies"] = args.policy
    if args.phi_deg:
        overrides["phi_deg_list"] = args.phi_deg
    if args.quota_rx:
        overrides["quota_rx_list"] = args.quota_rx
    if args.synthetic:
        overrides["scenario"] = "synthetic"
    if args.out:
        overrides["out_dir"] = args.out

    try:
        spec, base = parse_config(args.config, overrides)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    if args.validate_only:
        print(f"config OK: {len(spec.policies)} policies x "
              f"{len(spec.phi_deg)} beamwidths x {len(spec.quota_rx)} quotas x "
              f"{len(spec.seeds)} seeds -> "
              f"{len(spec.policies) * len(spec.phi_deg) * len(spec.quota_rx) * len(spec.seeds)} runs")
        return 0

    try:
        return run_experiment(spec, base)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
